from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    """Seeded random stream (PCG64) with named, reproducible child streams.

    Same seed and same call sequence give the same draws on every platform
    numpy supports.  ``child(key)`` derives an independent stream from
    ``(seed, key)`` without consuming draws from the parent, so adding a
    consumer in one place never perturbs another.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.draws = 0

    def child(self, key: str) -> Rng:
        digest = hashlib.sha256(f"{self.seed}:{key}".encode()).digest()
        return Rng(int.from_bytes(digest[:8], "little"))

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        self.draws += 1
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        self.draws += 1
        return self._gen.normal(loc, scale, size)

    def gumbel(self, size=None) -> np.ndarray:
        # -log(-log U) with U strictly inside (0, 1)
        self.draws += 1
        u = self._gen.random(size)
        u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).eps)
        return -np.log(-np.log(u))

    def bernoulli(self, p) -> np.ndarray:
        self.draws += 1
        p = np.asarray(p, dtype=np.float64)
        return (self._gen.random(p.shape) < p).astype(np.float64)

    def integers(self, low: int, high: int | None = None, size=None) -> np.ndarray:
        self.draws += 1
        return self._gen.integers(low, high, size)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        self.draws += 1
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        self.draws += 1
        return self._gen.permutation(n)

    def categorical(self, probs: np.ndarray) -> np.ndarray:
        """One draw per row of a row-stochastic matrix."""
        self.draws += 1
        probs = np.asarray(probs, dtype=np.float64)
        u = self._gen.random(probs.shape[:-1] + (1,))
        cdf = np.cumsum(probs, axis=-1)
        idx = (u > cdf).sum(axis=-1)
        # guard against cdf[-1] < 1 from rounding: fall back to last nonzero entry
        last = probs.shape[-1] - 1 - np.argmax(probs[..., ::-1] > 0, axis=-1)
        return np.minimum(idx, last)
