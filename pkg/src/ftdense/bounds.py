"""Per-routine error bounds against the reference oracles.

Each ``*_ratio`` function returns ``observed error / allowed error``; a value
at most 1 means the optimized result is within the documented bound. scal is
compared bitwise (ratio 0 or inf).
"""
from __future__ import annotations

import numpy as np

from .dense_core import TINY, UNIT_ROUNDOFF as u


def _ratio(err, tol) -> float:
    err = np.asarray(err, dtype=np.float64)
    tol = np.maximum(np.asarray(tol, dtype=np.float64), TINY)
    if err.size == 0:
        return 0.0
    r = err / tol
    # zero error over zero tolerance is a pass; NaN anywhere is a fail
    r = np.where(err == 0.0, 0.0, r)
    return float(np.inf) if np.isnan(r).any() else float(r.max())


def scal_ratio(result, alpha, x) -> float:
    ref = np.asarray(alpha * np.asarray(x), dtype=np.float64)
    same = np.array_equal(np.asarray(result).view(np.int64), ref.view(np.int64))
    return 0.0 if same else float(np.inf)


def dot_ratio(result, x, y, oracle) -> float:
    n = len(x)
    return _ratio(abs(result - oracle), 4 * max(n, 1) * u * np.sum(np.abs(np.asarray(x) * np.asarray(y))))


def nrm2_ratio(result, x, oracle) -> float:
    n = len(x)
    return _ratio(abs(result - oracle), 4 * max(n, 1) * u * abs(oracle))


def gemv_ratio(result, A, x, y, alpha, beta, oracle) -> float:
    n = A.shape[1]
    mag = abs(alpha) * (np.abs(A) @ np.abs(x)) + abs(beta) * np.abs(y)
    return _ratio(np.abs(result - oracle), 2 * (n + 2) * u * mag)


def gemm_ratio(result, A, B, C, alpha, beta, oracle) -> float:
    k = A.shape[1]
    mag = abs(alpha) * (np.abs(A) @ np.abs(B)) + abs(beta) * np.abs(C)
    return _ratio(np.abs(result - oracle), 2 * (k + 2) * u * mag)


def residual_ratio(A, X, B, factor: float) -> float:
    """``||L X - B||_inf / (factor * n * u * ||L||_inf * ||X||_inf)`` with L = tril(A)."""
    L = np.tril(A)
    n = L.shape[0]
    X2 = np.asarray(X).reshape(n, -1)
    R = L @ X2 - np.asarray(B).reshape(n, -1)
    normL = np.abs(L).sum(axis=1).max(initial=0.0)
    normX = np.abs(X2).sum(axis=1).max(initial=0.0)
    return _ratio(np.abs(R).sum(axis=1).max(initial=0.0), factor * max(n, 1) * u * normL * normX)


def trsv_ratio(A, x, b) -> float:
    return residual_ratio(A, x, b, 2.0)


def trsm_ratio(A, X, B) -> float:
    return residual_ratio(A, X, B, 4.0)
