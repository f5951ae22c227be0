"""The simulator: dynamics engine + optional memory + renderer, stepped once
per action.  Owns rollout logic shared by training, evaluation and the play
service."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .dynamics import DynamicsEngine, EngineState, initial_engine_state
from .memory import MemoryModule, MemoryState, init_memory_state
from .renderer import DisentangledRenderer, SimpleRenderer
from . import nn
from .rng import SeedStream
from .tensor import ContractError, NumericError, Tensor, no_grad


@dataclass
class SimState:
    engine: EngineState
    memory: MemoryState | None

    @property
    def batch(self) -> int:
        return self.engine.batch


@dataclass
class StepOutput:
    frame: Tensor                 # (B, 3, S, S) in [-1, 1]
    h: Tensor                     # (B, hidden)
    m: Tensor | None              # memory read
    alpha: Tensor | None          # attention after the shift
    packets: list | None          # component packets (disentangled renderer)


@dataclass
class Rollout:
    frames: list                  # generated x_hat_{t+1}, t = 0..T-1
    hs: list
    ms: list
    alphas: list
    packets_seq: list
    inputs: list                  # the frame fed at each step (real or generated)
    final_memory: MemoryState | None


class Simulator(nn.Module):
    def __init__(self, config: ModelConfig, rng: SeedStream):
        super().__init__()
        self.config = config
        self.dynamics = DynamicsEngine(config, rng.child("dynamics"))
        self.memory = MemoryModule(config, rng.child("memory")) if config.use_memory else None
        if config.use_disentangled_renderer:
            self.renderer = DisentangledRenderer(config, rng.child("renderer"))
        else:
            self.renderer = SimpleRenderer(config, rng.child("renderer"))

    @property
    def disentangled(self) -> bool:
        return isinstance(self.renderer, DisentangledRenderer)

    def initial_state(self, batch: int, rng: SeedStream, memory_n: int | None = None) -> SimState:
        """Zero recurrent state; fresh noise memory block with centered
        attention.  The first memory read of the noise block defines m_0."""
        mem = None
        m0 = None
        if self.config.use_memory:
            n = memory_n or self.config.memory_N
            mem = init_memory_state(batch, n, self.config.memory_D, rng.child("memory_block"))
            m0 = self.memory.read(mem)
        engine = initial_engine_state(batch, self.config.hidden_dim, m0)
        return SimState(engine=engine, memory=mem)

    def step(self, state: SimState, frame: Tensor, actions, z: Tensor):
        """One simulator tick: recurrent update, memory shift/write/read,
        render.  Returns (new state, outputs)."""
        engine = self.dynamics.step(state.engine, actions, z, frame)
        mem = state.memory
        m = None
        alpha = None
        if self.memory is not None:
            mem, m = self.memory.step(state.memory, actions, engine.h)
            alpha = mem.alpha
            engine = EngineState(h=engine.h, c=engine.c, m_prev=m)
        if self.disentangled:
            out_frame, packets = self.renderer(m, engine.h)
        else:
            out_frame = self.renderer(engine.h)
            packets = None
        return (SimState(engine=engine, memory=mem),
                StepOutput(frame=out_frame, h=engine.h, m=m, alpha=alpha, packets=packets))

    def rollout(self, real_frames: list, actions: np.ndarray, zs: list,
                warmup_frames: int, rng: SeedStream) -> Rollout:
        """Unroll T steps.  The first `warmup_frames` steps consume real
        frames as input; later steps consume the model's own output (x_0 is
        always real, so warmup_frames >= 1)."""
        t_steps = actions.shape[1]
        if len(real_frames) < t_steps + 1:
            raise ContractError("rollout needs T+1 real frames")
        if warmup_frames < 1:
            raise ContractError("warm-up must keep at least the initial frame real")
        state = self.initial_state(actions.shape[0], rng)
        frames, hs, ms, alphas, packets_seq, inputs = [], [], [], [], [], []
        prev_generated = None
        for t in range(t_steps):
            x_in = real_frames[t] if t < warmup_frames else prev_generated
            try:
                state, out = self.step(state, x_in, actions[:, t], zs[t])
            except NumericError as exc:
                raise NumericError(f"non-finite value at rollout step {t}: {exc}") from exc
            prev_generated = out.frame
            inputs.append(x_in)
            frames.append(out.frame)
            hs.append(out.h)
            ms.append(out.m)
            alphas.append(out.alpha)
            packets_seq.append(out.packets)
        return Rollout(frames=frames, hs=hs, ms=ms, alphas=alphas,
                       packets_seq=packets_seq, inputs=inputs,
                       final_memory=state.memory)

    def reread_memory(self, rollout: Rollout) -> list:
        """m_hat_t = read(alpha_t, M_final): what each step's location holds
        after the whole rollout finished writing."""
        if self.memory is None:
            raise ContractError("re-read requires the memory module")
        out = []
        for alpha in rollout.alphas:
            out.append(self.memory.read(MemoryState(M=rollout.final_memory.M, alpha=alpha)))
        return out

    def generate(self, frame0: np.ndarray, actions, rng: SeedStream,
                 memory_n: int | None = None) -> np.ndarray:
        """Inference rollout from one real frame; returns (T, 3, S, S) in
        [-1, 1].  Deterministic given the seed stream."""
        acts = np.asarray(actions, dtype=np.int64)
        with no_grad():
            state = self.initial_state(1, rng, memory_n=memory_n)
            x = Tensor(frame0[None].astype(np.float32))
            out_frames = []
            zrng = rng.child("z")
            for t in range(len(acts)):
                z = Tensor(zrng.normal((1, self.config.z_dim)))
                state, out = self.step(state, x, acts[t:t + 1], z)
                x = out.frame
                out_frames.append(out.frame.data[0])
        return np.stack(out_frames)

    def component_alone(self, component: int, c: Tensor) -> Tensor:
        if not self.disentangled:
            raise ContractError("component rendering requires the disentangling renderer")
        return self.renderer.component_content(component, c)
