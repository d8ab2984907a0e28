"""Triplet embedding matrices and scoring primitives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import SIGMOID_BOUND

DTYPE = np.float32


@dataclass(eq=False)
class EmbeddingTriplet:
    """Vertex matrix ``phi`` plus user- and item-context matrices.

    Only ``phi`` is used at recommendation time; the context matrices are
    training state for the neighborhood loss.
    """

    phi: np.ndarray
    phi_uc: np.ndarray
    phi_ic: np.ndarray

    def __post_init__(self):
        if not (self.phi.shape == self.phi_uc.shape == self.phi_ic.shape) or self.phi.ndim != 2:
            raise ValueError("phi, phi_uc and phi_ic must share one 2-D shape")

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    @property
    def vertex_count(self) -> int:
        return self.phi.shape[0]

    @property
    def nbytes(self) -> int:
        return self.phi.nbytes + self.phi_uc.nbytes + self.phi_ic.nbytes

    def copy(self) -> EmbeddingTriplet:
        return EmbeddingTriplet(self.phi.copy(), self.phi_uc.copy(), self.phi_ic.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.phi).all() and np.isfinite(self.phi_uc).all()
                    and np.isfinite(self.phi_ic).all())


def init_embeddings(vertex_count: int, dim: int, rng: np.random.Generator,
                    context_init: str = "zero") -> EmbeddingTriplet:
    """``phi`` ~ U(-0.5/d, 0.5/d); contexts zero (or the same uniform law)."""
    if vertex_count < 1 or dim < 1:
        raise ValueError("vertex_count and dim must be >= 1")
    bound = 0.5 / dim
    phi = rng.uniform(-bound, bound, size=(vertex_count, dim)).astype(DTYPE)
    if context_init == "zero":
        uc = np.zeros((vertex_count, dim), DTYPE)
        ic = np.zeros((vertex_count, dim), DTYPE)
    elif context_init == "uniform":
        uc = rng.uniform(-bound, bound, size=(vertex_count, dim)).astype(DTYPE)
        ic = rng.uniform(-bound, bound, size=(vertex_count, dim)).astype(DTYPE)
    else:
        raise ValueError(f"unknown context_init {context_init!r}")
    return EmbeddingTriplet(phi, uc, ic)


def score(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("vectors differ in dimension")
    return float(np.dot(a, b))


def sigmoid(x: float) -> float:
    """Logistic function with the input clamped to [-6, 6]."""
    x = min(max(float(x), -SIGMOID_BOUND), SIGMOID_BOUND)
    return 1.0 / (1.0 + math.exp(-x))


# ── text export ──────────────────────────────────────────────────────────────
# Header "<vertex_count> <dim>", then "<key> f1 .. fd" per vertex. Keys carry
# a side prefix (u: / i:) since user and item key spaces may overlap.

USER_PREFIX = "u:"
ITEM_PREFIX = "i:"


def vertex_labels(user_keys, item_keys) -> list[str]:
    return [USER_PREFIX + k for k in user_keys] + [ITEM_PREFIX + k for k in item_keys]


def save_matrix(path, matrix: np.ndarray, labels: list[str]) -> None:
    if len(labels) != matrix.shape[0]:
        raise ValueError("one label per row required")
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for label, row in zip(labels, matrix):
            # %.9g round-trips float32 exactly.
            f.write(label + " " + " ".join(f"{x:.9g}" for x in row.tolist()) + "\n")


def load_matrix(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: bad header")
        n, dim = int(header[0]), int(header[1])
        labels = []
        matrix = np.empty((n, dim), DTYPE)
        for r in range(n):
            parts = f.readline().rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}: row {r + 2} has {len(parts) - 1} values, expected {dim}")
            labels.append(parts[0])
            matrix[r] = np.asarray(parts[1:], dtype=np.float64)
    return labels, matrix
