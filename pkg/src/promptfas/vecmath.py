"""Dense vector primitives: similarity, distance, normalization, prototypes, softmax.

Every accumulation runs in double precision with a fixed evaluation order so
that identical inputs produce bit-identical outputs across runs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_vector",
    "cosine_similarity",
    "l2_distance",
    "normalize",
    "prototype",
    "softmax_probs",
]


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array of dim >= 1."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    The clamp protects downstream threshold and AUC logic from values like
    1.0000000000000002 produced by rounding.
    """
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    _check_same_dim(a, b)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_similarity is undefined for zero-norm input")
    value = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, value))


def l2_distance(a, b) -> float:
    """Euclidean distance between two vectors of equal dim."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    _check_same_dim(a, b)
    return float(np.linalg.norm(a - b))


def normalize(v) -> np.ndarray:
    """Scale a vector to unit L2 norm; raises on zero vectors instead of returning NaN."""
    v = as_vector(v)
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


def prototype(vs) -> np.ndarray:
    """Componentwise arithmetic mean of a non-empty list of same-dim vectors.

    The result is intentionally not re-normalized.
    """
    if len(vs) == 0:
        raise ValueError("prototype of an empty collection is undefined")
    rows = [as_vector(v, f"vs[{i}]") for i, v in enumerate(vs)]
    dim = rows[0].shape[0]
    for i, r in enumerate(rows):
        if r.shape[0] != dim:
            raise ValueError(f"dimension mismatch at index {i}: {r.shape[0]} vs {dim}")
    stacked = np.stack(rows, axis=0)
    if np.all(stacked == stacked[0]):
        return stacked[0].copy()  # mean of identical rows is exact, skip rounding
    return np.sum(stacked, axis=0) / float(len(rows))


def softmax_probs(sims, tau: float) -> np.ndarray:
    """Temperature softmax over similarity scores.

    Uses the max-shifted form, so |s/tau| up to 1e4 cannot overflow. The
    output sums to 1 within 1e-12.
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    s = as_vector(sims, "sims")
    z = s / float(tau)
    z = z - np.max(z)
    p = np.exp(z)
    return p / np.sum(p)
