"""gansim: an adversarially trained, interactive neural game simulator.

Train on recorded (frame, action) episodes from the maze gridworld, then
run the learned dynamics/memory/renderer stack as an interactive simulator:
a recurrent engine fuses actions and noise into its state, a shift-based
external memory keeps distant places consistent, and a disentangling
renderer composes static and dynamic content per frame.
"""

from .tensor import (
    ComputationTape,
    ContractError,
    NumericError,
    ShapeError,
    TapeError,
    Tensor,
    backward,
    grad_of,
    no_grad,
)
from .config import (
    LossWeights,
    ModelConfig,
    TrainConfig,
    desk_config,
    paper_pacman_config,
    paper_train_config,
)
from .optim import Adam, GradCheckReport, OracleError, adam_step, gradient_check
from .rng import SeedStream
from .model import Simulator
from .estimator import GameSimulator, NotFittedError
from . import ops

__all__ = [
    "Adam",
    "ComputationTape",
    "ContractError",
    "GameSimulator",
    "GradCheckReport",
    "LossWeights",
    "ModelConfig",
    "NotFittedError",
    "NumericError",
    "OracleError",
    "SeedStream",
    "ShapeError",
    "Simulator",
    "TapeError",
    "Tensor",
    "TrainConfig",
    "adam_step",
    "backward",
    "desk_config",
    "grad_of",
    "gradient_check",
    "no_grad",
    "ops",
    "paper_pacman_config",
    "paper_train_config",
]

__version__ = "0.1.0"
