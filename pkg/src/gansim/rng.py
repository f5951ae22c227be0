"""Deterministic, splittable random streams.

Every source of randomness in the package (weight init, noise sampling,
maze generation, negative-action sampling, ...) draws from a SeedStream.
Streams are keyed by (root seed, path string) through a counter-based
Philox generator, so two runs with the same seed are bit-identical no
matter how many independent consumers exist, and adding a new consumer
does not perturb existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _philox_key(seed: int, path: str) -> int:
    digest = hashlib.blake2b(f"{seed}\x1f{path}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


class SeedStream:
    """A named, stateful random stream derived from a root seed."""

    def __init__(self, seed: int, path: str = ""):
        self.seed = int(seed)
        self.path = path
        self._gen = np.random.Generator(np.random.Philox(key=_philox_key(self.seed, path)))

    def child(self, name: str) -> "SeedStream":
        """Derive an independent stream; safe to call in any order."""
        sub = f"{self.path}/{name}" if self.path else name
        return SeedStream(self.seed, sub)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return (self._gen.standard_normal(shape) * scale).astype(np.float32)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape).astype(np.float32)

    def integers(self, low: int, high: int, shape=None):
        return self._gen.integers(low, high, size=shape)

    def choice(self, options, p=None):
        return self._gen.choice(options, p=p)

    def shuffle(self, x) -> None:
        self._gen.shuffle(x)
