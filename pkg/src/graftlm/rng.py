"""Seeded random source with reproducible sub-streams."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError


class RngState:
    """Deterministic random source.

    Identical seed plus identical call sequence yields identical values,
    independent of platform (PCG64 is fully specified). `derive` forks a
    statistically independent stream so that e.g. data shuffling and
    dropout cannot perturb each other's draws.
    """

    def __init__(self, seed: int, algorithm: str = "pcg64", _spawn_key: tuple = ()):
        if algorithm != "pcg64":
            raise ConfigError(f"unknown rng algorithm {algorithm!r}; only 'pcg64' is supported")
        self.seed = int(seed)
        self.algorithm = algorithm
        self._spawn_key = tuple(_spawn_key)
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self._spawn_key))
        )

    def derive(self, stream: int) -> "RngState":
        """Fork an independent sub-stream; does not consume this stream."""
        return RngState(self.seed, self.algorithm, self._spawn_key + (int(stream),))

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return scale * self._gen.standard_normal(shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, p: np.ndarray) -> int:
        return int(self._gen.choice(n, p=p))

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, algorithm={self.algorithm!r}, spawn={self._spawn_key})"
