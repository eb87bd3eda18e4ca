"""Data model, kernel configuration and naive reference oracles.

Vectors are 1-D float64 numpy arrays (any stride). Matrices are 2-D float64
arrays; column-major storage with a leading dimension ``ld >= m`` is exactly
what numpy calls a Fortran-ordered view into a larger buffer, so
:func:`as_matrix` builds one from a flat buffer and the kernels accept any
strided 2-D array.

The oracles are deliberately plain loops in ascending index order. They are
compiled with numba so that the test suites can afford thousands of calls,
but they contain no blocking, unrolling or reordering.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .errors import DimensionError, SingularMatrixError

UNIT_ROUNDOFF = 2.0**-53
TINY = float(np.finfo(np.float64).tiny)


# --------------------------------------------------------------------------
# data model


def as_vector(data, n: int | None = None, inc: int = 1) -> np.ndarray:
    """View ``n`` elements of ``data`` taken every ``inc`` entries.

    >>> as_vector(np.arange(6.0), 3, 2)
    array([0., 2., 4.])
    """
    buf = np.asarray(data, dtype=np.float64)
    if buf.ndim != 1:
        raise DimensionError("vector storage must be one-dimensional")
    if inc < 1:
        raise DimensionError(f"inc must be >= 1, got {inc}")
    if n is None:
        n = (buf.size + inc - 1) // inc
    if n < 0 or (n > 0 and (n - 1) * inc >= buf.size):
        raise DimensionError(f"{n} elements with stride {inc} exceed storage of {buf.size}")
    return buf[: (n - 1) * inc + 1 : inc] if n > 0 else buf[:0]


def as_matrix(data, m: int, n: int, ld: int | None = None) -> np.ndarray:
    """Column-major ``m x n`` view of a flat buffer; element (i, j) is data[i + j*ld]."""
    buf = np.asarray(data, dtype=np.float64)
    if buf.ndim != 1:
        raise DimensionError("matrix storage must be one-dimensional")
    ld = m if ld is None else ld
    if m < 0 or n < 0:
        raise DimensionError("matrix extents must be non-negative")
    if ld < max(m, 1):
        raise DimensionError(f"leading dimension {ld} < rows {m}")
    if n > 0 and m > 0 and (n - 1) * ld + m > buf.size:
        raise DimensionError("matrix does not fit in storage")
    if m == 0 or n == 0:
        return np.zeros((m, n), order="F")
    buf = np.ascontiguousarray(buf)
    item = buf.itemsize
    return np.lib.stride_tricks.as_strided(buf, shape=(m, n), strides=(item, item * ld))


def colmajor(a) -> np.ndarray:
    """Copy ``a`` into a fresh Fortran-ordered float64 array."""
    return np.array(a, dtype=np.float64, order="F", copy=True)


def _vec(x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {x.shape}")
    return x


def _mat(a, name="A") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class KernelConfig:
    """Blocking, vectorization and tolerance parameters.

    ``lanes`` is the vector width W (8 models a 512-bit register of doubles,
    4 a 256-bit one). ``detect_only=None`` resolves to ``lanes == 4``.
    """

    mc: int = 192
    kc: int = 384
    nc: int = 9216
    mr: int = 8
    nr: int = 6
    lanes: int = 8
    unroll: int = 4
    prefetch_dist: int = 128
    c_tol: float = 64.0
    detect_only: bool | None = None
    trsv_block: int = 4

    def __post_init__(self):
        for name in ("mc", "kc", "nc", "mr", "nr", "unroll", "trsv_block"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mc % self.mr:
            raise ValueError(f"mc={self.mc} is not a multiple of mr={self.mr}")
        if self.nc % self.nr:
            raise ValueError(f"nc={self.nc} is not a multiple of nr={self.nr}")
        if self.lanes not in (4, 8):
            raise ValueError(f"lanes must be 4 or 8, got {self.lanes}")
        if self.prefetch_dist < 0:
            raise ValueError("prefetch_dist must be >= 0")
        if not self.c_tol > 0:
            raise ValueError("c_tol must be positive")

    @classmethod
    def avx512(cls, **kw) -> "KernelConfig":
        return cls(**kw)

    @classmethod
    def avx2(cls, **kw) -> "KernelConfig":
        kw.setdefault("lanes", 4)
        kw.setdefault("mr", 4)
        kw.setdefault("nr", 4)
        kw.setdefault("nc", 4096)
        return cls(**kw)

    @property
    def interval(self) -> int:
        """Elements per DMR verification interval (U*W)."""
        return self.unroll * self.lanes

    @property
    def is_detect_only(self) -> bool:
        return self.lanes == 4 if self.detect_only is None else bool(self.detect_only)

    def with_(self, **kw) -> "KernelConfig":
        return replace(self, **kw)


DEFAULT_CONFIG = KernelConfig()


def checksum_tolerance(absref, k_acc: int, c_tol: float = 64.0, floor: float = TINY):
    """Per-entry round-off threshold ``c_tol * u * k_acc * max(absref, floor)``."""
    absref = np.asarray(absref, dtype=np.float64)
    return c_tol * UNIT_ROUNDOFF * max(int(k_acc), 1) * np.maximum(absref, floor)


# --------------------------------------------------------------------------
# oracles (compiled plain loops)


@njit(cache=True, nogil=True)
def _oracle_scal(alpha, x, out):
    for i in range(x.shape[0]):
        out[i] = alpha * x[i]


@njit(cache=True, nogil=True)
def _oracle_axpy(alpha, x, y, out):
    for i in range(x.shape[0]):
        out[i] = alpha * x[i] + y[i]


@njit(cache=True, nogil=True)
def _oracle_dot(x, y):
    s = 0.0
    for i in range(x.shape[0]):
        s += x[i] * y[i]
    return s


@njit(cache=True, nogil=True)
def _oracle_nrm2(x):
    scale = 0.0
    for i in range(x.shape[0]):
        a = abs(x[i])
        if a > scale or a != a:
            scale = a
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    ssq = 0.0
    for i in range(x.shape[0]):
        t = x[i] / scale
        ssq += t * t
    return scale * np.sqrt(ssq)


@njit(cache=True, nogil=True)
def _oracle_gemv(A, x, y, alpha, beta, out):
    m, n = A.shape
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += A[i, j] * x[j]
        if beta == 0.0:
            out[i] = alpha * s
        else:
            out[i] = alpha * s + beta * y[i]


@njit(cache=True, nogil=True)
def _oracle_trsv(A, b, out):
    n = b.shape[0]
    for i in range(n):
        t = b[i]
        for j in range(i):
            t -= A[i, j] * out[j]
        out[i] = t / A[i, i]


@njit(cache=True, nogil=True)
def _oracle_gemm(A, B, C, alpha, beta, out):
    m, k = A.shape
    n = B.shape[1]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += A[i, p] * B[p, j]
            if beta == 0.0:
                out[i, j] = alpha * s
            else:
                out[i, j] = alpha * s + beta * C[i, j]


@njit(cache=True, nogil=True)
def _oracle_trsm(A, B, out):
    m, n = B.shape
    for j in range(n):
        for i in range(m):
            t = B[i, j]
            for p in range(i):
                t -= A[i, p] * out[p, j]
            out[i, j] = t / A[i, i]


def oracle_scal(alpha: float, x) -> np.ndarray:
    x = _vec(x)
    out = np.empty(x.shape[0])
    _oracle_scal(float(alpha), x, out)
    return out


def oracle_axpy(alpha: float, x, y) -> np.ndarray:
    x, y = _vec(x), _vec(y, "y")
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    out = np.empty(x.shape[0])
    _oracle_axpy(float(alpha), x, y, out)
    return out


def oracle_dot(x, y) -> float:
    x, y = _vec(x), _vec(y, "y")
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(_oracle_dot(x, y))


def oracle_nrm2(x) -> float:
    """Euclidean norm by a scaled two-pass accumulation (no overflow for representable results)."""
    return float(_oracle_nrm2(_vec(x)))


def oracle_gemv(A, x, y, alpha: float = 1.0, beta: float = 0.0) -> np.ndarray:
    A, x, y = _mat(A), _vec(x), _vec(y, "y")
    if A.shape != (y.shape[0], x.shape[0]):
        raise DimensionError(f"gemv shapes A{A.shape} x({x.shape[0]}) y({y.shape[0]})")
    out = np.empty(A.shape[0])
    _oracle_gemv(A, x, y, float(alpha), float(beta), out)
    return out


def _check_lower(A, rows):
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"triangular matrix must be square, got {A.shape}")
    if A.shape[0] != rows:
        raise DimensionError(f"A is {A.shape[0]}x{A.shape[0]} but right-hand side has {rows} rows")
    d = np.diagonal(A)
    bad = np.flatnonzero(d == 0.0)
    if bad.size:
        raise SingularMatrixError(f"zero diagonal entry at index {int(bad[0])}")


def oracle_trsv(A, b) -> np.ndarray:
    """Forward substitution with the lower triangle of ``A`` (non-unit diagonal)."""
    A, b = _mat(A), _vec(b, "b")
    _check_lower(A, b.shape[0])
    out = np.empty(b.shape[0])
    _oracle_trsv(A, b, out)
    return out


def oracle_gemm(A, B, C, alpha: float = 1.0, beta: float = 0.0) -> np.ndarray:
    A, B, C = _mat(A), _mat(B, "B"), _mat(C, "C")
    if A.shape[1] != B.shape[0] or C.shape != (A.shape[0], B.shape[1]):
        raise DimensionError(f"gemm shapes A{A.shape} B{B.shape} C{C.shape}")
    out = np.empty(C.shape, order="F")
    _oracle_gemm(A, B, C, float(alpha), float(beta), out)
    return out


def oracle_trsm(A, B) -> np.ndarray:
    """Solve ``A X = B`` column by column with the lower triangle of ``A``."""
    A, B = _mat(A), _mat(B, "B")
    _check_lower(A, B.shape[0])
    out = np.empty(B.shape, order="F")
    _oracle_trsm(A, B, out)
    return out
