"""Action-conditioned LSTM dynamics engine.

Fuses action, noise, and the previous memory read into the gate inputs:

    v = h_prev * H(a, z, m_prev)        s = C(x)
    i, f, o = sigmoid(W.v + W.s)        c = f*c_prev + i*tanh(W.v + W.s)
    h = o * tanh(c)

H embeds each input, concatenates, and runs a two-layer MLP; without the
memory module it fuses (a, z) only.  C is a strided conv stack ending in a
linear layer (three stride-2 convs for the desk preset, the six-layer
84x84 stack for the pacman preset).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, ops
from .config import ModelConfig
from .rng import SeedStream
from .tensor import ContractError, ShapeError, Tensor


@dataclass
class EngineState:
    h: Tensor
    c: Tensor
    m_prev: Tensor | None  # previous memory read; None when memory is off

    @property
    def batch(self) -> int:
        return self.h.shape[0]


def initial_engine_state(batch: int, hidden_dim: int, m0: Tensor | None) -> EngineState:
    return EngineState(
        h=ops.zeros((batch, hidden_dim)),
        c=ops.zeros((batch, hidden_dim)),
        m_prev=m0,
    )


class FrameEncoder(nn.Module):
    """C(x): conv stack + linear to hidden_dim."""

    def __init__(self, config: ModelConfig, rng: SeedStream):
        super().__init__()
        self.config = config
        s = config.image_size
        if config.preset == "pacman":
            # published 84x84 stack: 41, 39, 19, 17, 8 -> reshape -> Linear(512)
            specs = [(64, 3, 2), (64, 3, 1), (64, 3, 2), (64, 3, 1), (64, 3, 2)]
            in_ch = config.image_channels
            self.convs = []
            for i, (ch, k, st) in enumerate(specs):
                conv = nn.Conv2d(in_ch, ch, k, rng.child(f"conv{i}"), stride=st, padding=0)
                self.convs.append(conv)
                self._modules[f"conv{i}"] = conv
                s = (s - k) // st + 1
                in_ch = ch
        else:
            widths = (16, 32, 64)
            in_ch = config.image_channels
            self.convs = []
            for i, ch in enumerate(widths):
                conv = nn.Conv2d(in_ch, ch, 3, rng.child(f"conv{i}"), stride=2, padding=1)
                self.convs.append(conv)
                self._modules[f"conv{i}"] = conv
                s = (s + 2 - 3) // 2 + 1
                in_ch = ch
        self.flat_dim = in_ch * s * s
        self.proj = nn.Linear(self.flat_dim, config.hidden_dim, rng.child("proj"))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.image_channels or x.shape[2] != self.config.image_size:
            raise ShapeError(
                f"frame encoder expects (B,{self.config.image_channels},"
                f"{self.config.image_size},{self.config.image_size}), got {tuple(x.shape)}")
        for conv in self.convs:
            x = ops.leaky_relu(conv(x))
        return self.proj(ops.reshape(x, (x.shape[0], self.flat_dim)))


class DynamicsEngine(nn.Module):
    def __init__(self, config: ModelConfig, rng: SeedStream):
        super().__init__()
        self.config = config
        hd = config.hidden_dim
        emb = max(16, hd // 4)
        self.action_emb = nn.Linear(config.action_count, emb, rng.child("action_emb"), bias=False)
        self.z_emb = nn.Linear(config.z_dim, emb, rng.child("z_emb"))
        fused_in = 2 * emb
        if config.use_memory:
            self.m_emb = nn.Linear(config.memory_D, emb, rng.child("m_emb"))
            fused_in += emb
        self.fuse_l1 = nn.Linear(fused_in, hd, rng.child("fuse_l1"))
        self.fuse_l2 = nn.Linear(hd, hd, rng.child("fuse_l2"))
        self.encoder = FrameEncoder(config, rng.child("encoder"))

        for gate in ("i", "f", "o", "c"):
            setattr(self, f"_w{gate}v", nn.Linear(hd, hd, rng.child(f"w{gate}v")))
            setattr(self, f"_w{gate}s", nn.Linear(hd, hd, rng.child(f"w{gate}s"), bias=False))
        # forget gate opens by default
        self._wfv.bias.data[...] = 1.0

    def fuse_inputs(self, state: EngineState, actions, z: Tensor) -> Tensor:
        """v = h_prev * H(a, z, m_prev)."""
        idx = np.asarray(actions, dtype=np.int64)
        if (idx < 0).any() or (idx >= self.config.action_count).any():
            raise ContractError("action index out of range")
        parts = [self.action_emb(ops.one_hot(idx, self.config.action_count)), self.z_emb(z)]
        if self.config.use_memory:
            if state.m_prev is None:
                raise ContractError("memory read missing from engine state")
            parts.append(self.m_emb(state.m_prev))
        fused = self.fuse_l2(ops.leaky_relu(self.fuse_l1(ops.concat(parts, axis=1))))
        return ops.mul(state.h, fused)

    def encode_frame(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def gates(self, v: Tensor, s: Tensor):
        i = ops.sigmoid(ops.add(self._wiv(v), self._wis(s)))
        f = ops.sigmoid(ops.add(self._wfv(v), self._wfs(s)))
        o = ops.sigmoid(ops.add(self._wov(v), self._wos(s)))
        cand = ops.tanh(ops.add(self._wcv(v), self._wcs(s)))
        return i, f, o, cand

    def step(self, state: EngineState, actions, z: Tensor, x: Tensor) -> EngineState:
        """One recurrent update; m_prev is carried unchanged (the memory
        module replaces it after its own read)."""
        v = self.fuse_inputs(state, actions, z)
        s = self.encode_frame(x)
        i, f, o, cand = self.gates(v, s)
        c = ops.add(ops.mul(f, state.c), ops.mul(i, cand))
        h = ops.mul(o, ops.tanh(c))
        return EngineState(h=h, c=c, m_prev=state.m_prev)
