"""Constant-time sampling from a fixed discrete distribution."""

from __future__ import annotations

import numpy as np

from . import _kernels


class AliasTable:
    """Walker/Vose alias table over outcomes ``0..n-1``.

    Weights may sum to any positive total; they are normalized on
    construction. A draw is one uniform slot pick plus one biased coin.

    >>> t = AliasTable([1.0, 3.0])
    >>> t.probabilities().round(2).tolist()
    [0.25, 0.75]
    """

    __slots__ = ("prob", "alias")

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        if w.sum() <= 0:
            raise ValueError("weights must have a positive total")
        self.prob = np.empty(w.size, dtype=np.float64)
        self.alias = np.empty(w.size, dtype=np.int64)
        _kernels.build_alias(w, self.prob, self.alias)

    @property
    def slot_count(self) -> int:
        return self.prob.size

    def __len__(self) -> int:
        return self.prob.size

    @property
    def nbytes(self) -> int:
        return self.prob.nbytes + self.alias.nbytes

    def _lookup(self, slot: int) -> tuple[float, int]:
        return self.prob[slot], self.alias[slot]

    def draw(self, rng: np.random.Generator) -> int:
        slot = int(rng.integers(self.prob.size))
        keep, other = self._lookup(slot)
        return slot if rng.random() < keep else int(other)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Vectorized ``size`` draws."""
        slots = rng.integers(self.prob.size, size=size)
        coins = rng.random(size)
        return np.where(coins < self.prob[slots], slots, self.alias[slots])

    def probabilities(self) -> np.ndarray:
        """Exact outcome distribution encoded by the table."""
        n = self.prob.size
        out = self.prob / n
        np.add.at(out, self.alias, (1.0 - self.prob) / n)
        return out
