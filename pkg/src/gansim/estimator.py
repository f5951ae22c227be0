"""Estimator-style facade: fit on recorded episodes, predict future frames.

Follows the scikit-learn conventions (constructor stores hyperparameters
verbatim, `get_params`/`set_params`, trailing-underscore fitted attributes,
NotFittedError) so the trainer composes with generic hyperparameter
tooling.  The heavy lifting lives in gansim.training.
"""

from __future__ import annotations

import inspect
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import LossWeights, ModelConfig, TrainConfig, desk_config
from .data import read_dataset
from .env import Episode
from .evaluation import run_cbh_model
from .rng import SeedStream
from .training import Trainer


class NotFittedError(RuntimeError):
    pass


class GameSimulator:
    """Action-conditioned neural game simulator with a fit/predict surface.

    fit(X) consumes episodes (a list of `Episode` or a path to a GGEP
    dataset); predict(frame0, actions) rolls the learned simulator forward.
    """

    def __init__(self, preset: str = "desk", epochs: int = 1, sequence_length: int = 8,
                 batch_size: int = 4, lr: float = 1e-4, seed: int = 0,
                 max_iterations: int | None = None, use_memory: bool = True,
                 use_disentangled_renderer: bool = True, lambda_cycle: float = 0.05,
                 checkpoint_dir=None):
        self.preset = preset
        self.epochs = epochs
        self.sequence_length = sequence_length
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.max_iterations = max_iterations
        self.use_memory = use_memory
        self.use_disentangled_renderer = use_disentangled_renderer
        self.lambda_cycle = lambda_cycle
        self.checkpoint_dir = checkpoint_dir

    # -- sklearn plumbing ---------------------------------------------------

    @classmethod
    def _param_names(cls):
        return [p for p in inspect.signature(cls.__init__).parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "GameSimulator":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for GameSimulator")
            setattr(self, key, value)
        return self

    def _check_fitted(self):
        if not hasattr(self, "simulator_"):
            raise NotFittedError("this GameSimulator is not fitted; call fit first")

    # -- fitting ------------------------------------------------------------

    def _as_episodes(self, X):
        if isinstance(X, (str, Path)):
            episodes, _ = read_dataset(X)
            return episodes
        episodes = list(X)
        if not episodes or not all(isinstance(e, Episode) for e in episodes):
            raise ValueError("X must be a GGEP path or a non-empty list of Episode")
        return episodes

    def _model_config(self) -> ModelConfig:
        if self.preset != "desk":
            raise ValueError("only the desk preset is trainable at desk scale")
        return desk_config(use_memory=self.use_memory,
                           use_disentangled_renderer=self.use_disentangled_renderer)

    def fit(self, X, y=None) -> "GameSimulator":
        episodes = self._as_episodes(X)
        config = self._model_config()
        tc = TrainConfig(sequence_length=self.sequence_length, batch_size=self.batch_size,
                         epochs=self.epochs, lr=self.lr, seed=self.seed,
                         max_iterations=self.max_iterations)
        trainer = Trainer(config, tc, weights=LossWeights(lambda_c=self.lambda_cycle),
                          out_dir=self.checkpoint_dir)
        history = trainer.train(episodes)
        self.trainer_ = trainer
        self.simulator_ = trainer.sim
        self.config_ = config
        self.history_ = history
        self.n_episodes_ = len(episodes)
        return self

    # -- inference ----------------------------------------------------------

    def predict(self, frame0: np.ndarray, actions, seed: int = 0) -> np.ndarray:
        """Generated frames (T, H, W, 3) u8 from one initial u8 frame."""
        self._check_fitted()
        from .data import frame_to_float, frame_to_u8

        frames = self.simulator_.generate(frame_to_float(np.asarray(frame0, dtype=np.uint8)),
                                          actions, SeedStream(seed, "predict"),
                                          memory_n=self.config_.eval_memory_N)
        return frame_to_u8(frames)

    def score(self, X=None, y=None, k: int = 5, trials: int = 8, seed: int = 0) -> float:
        """Negative mean come-back-home distance (higher is better)."""
        self._check_fitted()
        result = run_cbh_model(self.simulator_, k=k, trials=trials, seed=seed)
        return -result.mean

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(path, self.config_,
                        {f"generator.{k}": v for k, v in self.simulator_.state().items()},
                        meta={"estimator_params": {k: v for k, v in self.get_params().items()
                                                   if not isinstance(v, Path)}})

    @classmethod
    def load(cls, path) -> "GameSimulator":
        from .model import Simulator

        config, tensors, meta = load_checkpoint(path)
        est = cls(**{k: v for k, v in meta.get("estimator_params", {}).items()
                     if k in cls._param_names()})
        sim = Simulator(config, SeedStream(0).child("load"))
        sim.load_state({k[len("generator."):]: v for k, v in tensors.items()
                        if k.startswith("generator.")})
        sim.eval()
        est.simulator_ = sim
        est.config_ = config
        est.history_ = []
        return est
