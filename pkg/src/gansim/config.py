"""Model/training configuration and the two reference presets.

The `desk` preset is sized so a full training run fits in minutes on a CPU
(16x16 frames, 64-d state).  The `pacman` preset reproduces the published
architecture tables (84x84 frames, 512-d state, 39/99 memory block) and is
used by shape-contract tests; training it is out of desk scope.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .tensor import ContractError

ACTIONS = ("left", "right", "up", "down", "stay")
COUNTERPARTS = {"left": "right", "right": "left", "up": "down", "down": "up"}


@dataclass
class ModelConfig:
    preset: str = "desk"
    action_names: tuple = ACTIONS
    counterparts: dict = field(default_factory=lambda: dict(COUNTERPARTS))
    z_dim: int = 8
    hidden_dim: int = 64
    image_size: int = 16
    image_channels: int = 3
    memory_N: int = 9
    eval_memory_N: int = 25
    memory_D: int = 32
    use_memory: bool = True
    use_disentangled_renderer: bool = True
    object_attention: str = "softmax"  # or "sigmoid"
    temporal_levels: int = 1
    disc_dim: int = 32

    def __post_init__(self):
        self.action_names = tuple(self.action_names)
        if self.image_channels != 3:
            raise ContractError("image_channels must be 3")
        if self.memory_N % 2 == 0 or self.eval_memory_N % 2 == 0:
            raise ContractError("memory block sizes must be odd")
        if self.use_disentangled_renderer and not self.use_memory:
            raise ContractError("the disentangling renderer requires the memory module")
        if self.object_attention not in ("softmax", "sigmoid"):
            raise ContractError(f"unknown object attention '{self.object_attention}'")
        names = set(self.action_names)
        for a, b in self.counterparts.items():
            if a not in names or b not in names:
                raise ContractError(f"counterpart entry {a}->{b} not in action set")
            if self.counterparts.get(b) != a:
                raise ContractError(f"counterpart table is not an involution at '{a}'")

    @property
    def action_count(self) -> int:
        return len(self.action_names)

    def action_index(self, name: str) -> int:
        return self.action_names.index(name)

    def counterpart_index(self, idx: int):
        """Index of the registered counterpart action, or None."""
        name = self.action_names[idx]
        other = self.counterparts.get(name)
        return None if other is None else self.action_names.index(other)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["action_names"] = list(self.action_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["action_names"] = tuple(d["action_names"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def desk_config(**overrides) -> ModelConfig:
    return replace(ModelConfig(), **overrides) if overrides else ModelConfig()


def paper_pacman_config(**overrides) -> ModelConfig:
    cfg = ModelConfig(
        preset="pacman",
        z_dim=32,
        hidden_dim=512,
        image_size=84,
        memory_N=39,
        eval_memory_N=99,
        memory_D=512,
        temporal_levels=2,
        disc_dim=64,
    )
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class LossWeights:
    lambda_a: float = 1.0
    lambda_i: float = 1.0
    lambda_r: float = 0.05
    lambda_f: float = 0.05
    lambda_c: float = 0.05
    gamma_r1: float = 10.0
    mask_reg: float = 0.01


@dataclass
class TrainConfig:
    sequence_length: int = 8
    batch_size: int = 4
    epochs: int = 1
    warmup_initial: int = 4
    warmup_final_epoch: int = 5
    lr: float = 1e-4
    seed: int = 0
    checkpoint_interval: int = 200
    max_iterations: int | None = None

    def __post_init__(self):
        if self.sequence_length < 1 or self.batch_size < 1:
            raise ContractError("sequence_length and batch_size must be positive")
        if self.warmup_initial < 1 or self.warmup_final_epoch < 1:
            raise ContractError("warm-up parameters must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def paper_train_config() -> TrainConfig:
    return TrainConfig(sequence_length=18, batch_size=12, epochs=20,
                       warmup_initial=9, warmup_final_epoch=20, lr=1e-4)
