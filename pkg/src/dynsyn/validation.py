"""Input validation helpers shared by the estimators and pipeline functions."""

from __future__ import annotations

import numpy as np

__all__ = ["check_square", "check_distance_matrix", "check_finite"]


def check_finite(x, name: str = "array") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    return x


def check_square(x, name: str = "matrix") -> np.ndarray:
    x = check_finite(x, name)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"{name} must be square, got shape {x.shape}")
    return x


def check_distance_matrix(x) -> np.ndarray:
    """Validate and canonicalize a dissimilarity matrix.

    Requires a finite square matrix, symmetric to 1e-9 and non-negative with
    a (near-)zero diagonal; returns an exactly symmetric copy with the
    diagonal forced to zero.
    """
    d = check_square(x, "distance matrix").copy()
    if np.abs(d - d.T).max(initial=0.0) > 1e-9:
        raise ValueError("distance matrix must be symmetric")
    if d.min(initial=0.0) < -1e-12:
        raise ValueError("distances must be non-negative")
    if np.abs(np.diag(d)).max(initial=0.0) > 1e-9:
        raise ValueError("distance matrix diagonal must be zero")
    d = 0.5 * (d + d.T)
    np.clip(d, 0.0, None, out=d)
    np.fill_diagonal(d, 0.0)
    return d
