"""Shift-based external memory.

An N x N grid of D-vectors plus a soft attention map alpha.  Actions move
alpha through learned softmaxed 3x3 shift kernels, a gate from the hidden
state decides whether the shift happens at all (blocked moves), and writes
are soft erase/add updates at the attended locations.

Counterpart actions (left/right, up/down) share kernel parameters: the
counterpart's kernel is the source action's kernel flipped along both
spatial axes.  The flip is applied to the softmaxed kernel, so the
constraint holds bit-exactly by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, ops
from .config import ModelConfig
from .rng import SeedStream
from .tensor import ContractError, Tensor


@dataclass
class MemoryState:
    """Block M (B,N,N,D) and attention alpha (B,N,N)."""

    M: Tensor
    alpha: Tensor

    @property
    def block_size(self) -> int:
        return self.M.shape[1]

    def alpha_sum(self) -> np.ndarray:
        return self.alpha.data.sum(axis=(1, 2))


def init_memory_state(batch: int, n: int, d: int, rng: SeedStream) -> MemoryState:
    """Noise block, attention one-hot at the center cell."""
    if n % 2 == 0 or n < 3:
        raise ContractError(f"memory block size must be odd and >= 3, got {n}")
    block = Tensor(rng.normal((batch, n, n, d)))
    alpha = np.zeros((batch, n, n), dtype=np.float32)
    alpha[:, n // 2, n // 2] = 1.0
    return MemoryState(M=block, alpha=Tensor(alpha))


def resize_block(batch: int, new_n: int, d: int, rng: SeedStream) -> MemoryState:
    """Fresh block of a new size with alpha re-centered; weights untouched
    (the kernel/gate/erase networks are size-agnostic)."""
    return init_memory_state(batch, new_n, d, rng)


# reverses a flattened 3x3 kernel = flip along both spatial axes
_REV9 = np.eye(9, dtype=np.float32)[::-1].copy()


class MemoryModule(nn.Module):
    def __init__(self, config: ModelConfig, rng: SeedStream):
        super().__init__()
        self.config = config
        a = config.action_count
        k_hidden = max(16, config.hidden_dim // 2)
        self.kernel_l1 = nn.Linear(a, k_hidden, rng.child("kernel_l1"))
        self.kernel_l2 = nn.Linear(k_hidden, 9, rng.child("kernel_l2"))
        self.gate_l1 = nn.Linear(config.hidden_dim, k_hidden, rng.child("gate_l1"))
        self.gate_l2 = nn.Linear(k_hidden, 1, rng.child("gate_l2"))
        self.erase_add = nn.Linear(config.hidden_dim, 2 * config.memory_D, rng.child("erase_add"))

        # per action: (source action, flip?) so counterpart kernels share weights
        source = np.zeros((a, a), dtype=np.float32)
        flip = np.zeros((a, 1), dtype=np.float32)
        for i, name in enumerate(config.action_names):
            j = config.counterpart_index(i)
            if j is not None and j < i:
                source[i, j] = 1.0
                flip[i, 0] = 1.0
            else:
                source[i, i] = 1.0
        self._source = Tensor(source)
        self._flip = Tensor(flip)

    def all_kernels(self) -> Tensor:
        """Softmaxed 3x3 shift kernels for every action, (A, 3, 3)."""
        logits = self.kernel_l2(ops.leaky_relu(self.kernel_l1(self._source)))
        w = ops.softmax(logits, axis=1)
        flipped = ops.matmul(w, Tensor(_REV9))
        chosen = ops.add(ops.mul(self._flip, flipped),
                         ops.mul(ops.add_scalar(ops.neg(self._flip), 1.0), w))
        return ops.reshape(chosen, (self.config.action_count, 3, 3))

    def compute_shift_kernel(self, actions) -> Tensor:
        """Kernels for a batch of action indices, (B, 3, 3)."""
        idx = np.asarray(actions, dtype=np.int64)
        if (idx < 0).any() or (idx >= self.config.action_count).any():
            raise ContractError("action index out of range")
        flat = ops.reshape(self.all_kernels(), (self.config.action_count, 9))
        picked = ops.matmul(ops.one_hot(idx, self.config.action_count), flat)
        return ops.reshape(picked, (len(idx), 3, 3))

    def gate(self, h: Tensor) -> Tensor:
        return ops.sigmoid(self.gate_l2(ops.leaky_relu(self.gate_l1(h))))

    def erase_add_vectors(self, h: Tensor):
        raw = self.erase_add(h)
        e_raw, d = ops.split(raw, 2, axis=1)
        return ops.sigmoid(e_raw), d

    def shift_attention(self, state: MemoryState, w: Tensor, g: Tensor) -> Tensor:
        """alpha' = g * conv2d(alpha, w, zero pad 1) + (1-g) * alpha, renormalized.

        The convolution is expanded as the 9-term weighted shift sum so each
        batch item can carry its own kernel.
        """
        alpha = state.alpha
        b, n, _ = alpha.shape
        padded = ops.pad_nd(alpha, ((0, 0), (1, 1), (1, 1)))
        shifted = None
        for i in range(3):
            for j in range(3):
                window = ops.slice_nd(padded, (0, i, j), (b, n, n))
                coeff = ops.reshape(ops.slice_nd(w, (0, i, j), (b, 1, 1)), (b, 1, 1))
                term = ops.mul(coeff, window)
                shifted = term if shifted is None else ops.add(shifted, term)
        g3 = ops.reshape(g, (b, 1, 1))
        mixed = ops.add(ops.mul(g3, shifted),
                        ops.mul(ops.add_scalar(ops.neg(g3), 1.0), alpha))
        total = ops.sum_(mixed, axis=(1, 2), keepdims=True)
        return ops.mul(mixed, ops.pow_const(ops.add_scalar(total, 1e-12), -1.0))

    def write(self, state: MemoryState, h: Tensor) -> Tensor:
        """M_i <- M_i * (1 - alpha_i * e) + alpha_i * d, for every location."""
        e, d = self.erase_add_vectors(h)
        b, n, _ = state.alpha.shape
        dd = state.M.shape[3]
        a4 = ops.reshape(state.alpha, (b, n, n, 1))
        e4 = ops.reshape(e, (b, 1, 1, dd))
        d4 = ops.reshape(d, (b, 1, 1, dd))
        keep = ops.add_scalar(ops.neg(ops.mul(a4, e4)), 1.0)
        return ops.add(ops.mul(state.M, keep), ops.mul(a4, d4))

    def read(self, state: MemoryState) -> Tensor:
        """m = sum_i alpha_i * M_i, (B, D)."""
        b, n, _ = state.alpha.shape
        a4 = ops.reshape(state.alpha, (b, n, n, 1))
        return ops.sum_(ops.mul(a4, state.M), axis=(1, 2))

    def step(self, state: MemoryState, actions, h: Tensor) -> tuple[MemoryState, Tensor]:
        """Shift, write, read; returns the new state and the read vector."""
        w = self.compute_shift_kernel(actions)
        g = self.gate(h)
        alpha = self.shift_attention(state, w, g)
        new_state = MemoryState(M=state.M, alpha=alpha)
        new_state = MemoryState(M=self.write(new_state, h), alpha=alpha)
        m = self.read(new_state)
        return new_state, m
