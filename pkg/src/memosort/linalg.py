"""Small dense matrix helpers used by the filter.

Backed by numpy; this module only pins down the contracts the filter relies
on (shape checks, SPD solves that fail loudly, symmetric outer products).
All functions accept a leading batch axis.
"""
from __future__ import annotations

import numpy as np


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization meets a non-positive pivot."""


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def symmetrize(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def cholesky(a):
    a = np.asarray(a, dtype=np.float64)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None


def spd_solve(a, b):
    """Solve ``a @ x = b`` for symmetric positive-definite ``a``.

    Raises NotPositiveDefiniteError if the Cholesky factorization fails.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != a.shape[-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"incompatible shapes {a.shape} and {b.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    low = cholesky(a)
    y = np.linalg.solve(low, b)
    return np.linalg.solve(np.swapaxes(low, -1, -2), y)


def spd_inverse(a):
    a = np.asarray(a, dtype=np.float64)
    eye = np.broadcast_to(np.eye(a.shape[-1]), a.shape)
    return symmetrize(spd_solve(a, eye))


def outer(v):
    """``v v^T`` for a vector (or a batch of vectors along the last axis)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] == 0:
        raise ValueError("outer() needs a nonempty vector")
    return v[..., :, None] * v[..., None, :]
