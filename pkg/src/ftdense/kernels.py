"""Optimized, unprotected kernels: scal, dot, nrm2, gemv, trsv, gemm, trsm.

Every routine is written against a W-lane block abstraction: ``lanes`` (W)
consecutive doubles form one vector operation and loops are unrolled ``unroll``
(U) times, so one trip of a main loop covers U*W elements. Remainders always
run as scalar loops.

The arithmetic of each routine lives in a small ``_*_chunk``/``_*_block``
helper that reads from one buffer and writes to another. The plain kernels
call it in place; :mod:`ftdense.dmr` calls the very same helper twice (primary
and shadow) on a checkpoint, which is why a fault-free protected run is
bitwise identical to the plain one.

GEMM follows the Goto/BLIS scheme: B slices are packed into N_R-column
micro-panels, A blocks into M_R-row micro-panels, and an M_R x N_R micro
kernel accumulates each tile over the K_C slice. The loop nest is
pc (K_C) -> jc (N_C) -> ic (M_C), so a single trip of the outer loop is one
rank-K_C update of the whole C.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from llvmlite import ir as llir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

from .dense_core import DEFAULT_CONFIG, KernelConfig, _check_lower, _mat, _vec
from .errors import DimensionError


@intrinsic
def _prefetch(typingctx, arr, idx):
    """Emit ``llvm.prefetch`` (read, L1 locality) for ``arr[idx]``."""
    if not isinstance(arr, types.Array):
        return None
    sig = types.void(arr, idx)

    def codegen(context, builder, signature, args):
        aryty = signature.args[0]
        ary = context.make_array(aryty)(context, builder, args[0])
        ptr = cgutils.get_item_pointer(
            context, builder, aryty, ary, [args[1]], wraparound=False, boundscheck=False
        )
        i8p = llir.IntType(8).as_pointer()
        i32 = llir.IntType(32)
        fnty = llir.FunctionType(llir.VoidType(), [i8p, i32, i32, i32])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "llvm.prefetch.p0i8")
        builder.call(fn, [builder.bitcast(ptr, i8p), i32(0), i32(3), i32(1)])
        return context.get_dummy_value()

    return sig, codegen


# --------------------------------------------------------------------------
# Level 1


@njit(cache=True, nogil=True, inline="always")
def _scal_block(alpha, src, s0, dst, d0, cnt):
    for q in range(cnt):
        dst[d0 + q] = alpha * src[s0 + q]


@njit(cache=True, nogil=True)
def _scal_kernel(alpha, x, W, U, pf):
    n = x.shape[0]
    B = W * U
    nint = n // B
    for t in range(nint):
        base = t * B
        if pf > 0:
            # hint every other lane block; the hardware prefetcher covers the rest
            for u in range(0, U, 2):
                p = base + u * W + pf
                if p < n:
                    _prefetch(x, p)
        _scal_block(alpha, x, base, x, base, B)
    for i in range(nint * B, n):
        x[i] = alpha * x[i]


@njit(cache=True, nogil=True, inline="always")
def _dot_chunk(x, y, base, acc_in, acc_out, B):
    for q in range(B):
        acc_out[q] = acc_in[q] + x[base + q] * y[base + q]


@njit(cache=True, nogil=True, inline="always")
def _hsum(acc, B):
    s = 0.0
    for q in range(B):
        s += acc[q]
    return s


@njit(cache=True, nogil=True, inline="always")
def _dot_tail(x, y, s, i0, i1):
    for i in range(i0, i1):
        s += x[i] * y[i]
    return s


@njit(cache=True, nogil=True)
def _dot_kernel(x, y, W, U, pf):
    n = x.shape[0]
    B = W * U
    nint = n // B
    acc = np.zeros(B)
    for t in range(nint):
        base = t * B
        if pf > 0 and base + pf < n:
            _prefetch(x, base + pf)
            _prefetch(y, base + pf)
        _dot_chunk(x, y, base, acc, acc, B)
    s = _hsum(acc, B)
    return _dot_tail(x, y, s, nint * B, n)


@njit(cache=True, nogil=True)
def _absmax(x):
    scale = 0.0
    for i in range(x.shape[0]):
        a = abs(x[i])
        if a > scale or a != a:
            scale = a
    return scale


@njit(cache=True, nogil=True, inline="always")
def _ssq_chunk(x, scale, base, acc_in, acc_out, B):
    for q in range(B):
        t = x[base + q] / scale
        acc_out[q] = acc_in[q] + t * t


@njit(cache=True, nogil=True, inline="always")
def _ssq_tail(x, scale, s, i0, i1):
    for i in range(i0, i1):
        t = x[i] / scale
        s += t * t
    return s


@njit(cache=True, nogil=True)
def _nrm2_kernel(x, W, U, pf):
    scale = _absmax(x)
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    n = x.shape[0]
    B = W * U
    nint = n // B
    acc = np.zeros(B)
    for t in range(nint):
        base = t * B
        if pf > 0 and base + pf < n:
            _prefetch(x, base + pf)
        _ssq_chunk(x, scale, base, acc, acc, B)
    s = _hsum(acc, B)
    s = _ssq_tail(x, scale, s, nint * B, n)
    return scale * np.sqrt(s)


# --------------------------------------------------------------------------
# Level 2

ROWS_PER_SWEEP = 4  # R_i: rows sharing one load of each x lane block


@njit(cache=True, nogil=True, inline="always")
def _gemv_chunk(A, x, i0, rb, j0, W, U, acc_in, acc_out):
    """Add U lane blocks of columns starting at j0 into rb row accumulators."""
    for q in range(rb * W):
        acc_out[q] = acc_in[q]
    for u in range(U):
        jb = j0 + u * W
        for l in range(W):
            xv = x[jb + l]
            for r in range(rb):
                acc_out[r * W + l] += A[i0 + r, jb + l] * xv


@njit(cache=True, nogil=True, inline="always")
def _gemv_finish(A, x, y, i0, rb, j1, n, alpha, beta, acc, W, out, o0):
    """Horizontal reduction, scalar column tail and the alpha/beta update."""
    for r in range(rb):
        t = 0.0
        for l in range(W):
            t += acc[r * W + l]
        for j in range(j1, n):
            t += A[i0 + r, j] * x[j]
        if beta == 0.0:
            out[o0 + r] = alpha * t
        else:
            out[o0 + r] = alpha * t + beta * y[i0 + r]


@njit(cache=True, nogil=True)
def _gemv_kernel(A, x, y, alpha, beta, W, U, xloads):
    m, n = A.shape
    B = W * U
    nch = n // B
    j1 = nch * B
    acc = np.zeros(ROWS_PER_SWEEP * W)
    for i0 in range(0, m, ROWS_PER_SWEEP):
        rb = min(ROWS_PER_SWEEP, m - i0)
        for q in range(rb * W):
            acc[q] = 0.0
        for c in range(nch):
            _gemv_chunk(A, x, i0, rb, c * B, W, U, acc, acc)
        # one load per x element per sweep, shared by the rb rows
        xloads[0] += n
        _gemv_finish(A, x, y, i0, rb, j1, n, alpha, beta, acc, W, y, i0)


@njit(cache=True, nogil=True, inline="always")
def _trsv_diag(A, src, s0, jb, nb, dst, d0):
    """Forward substitution on the nb x nb diagonal block starting at jb."""
    for i in range(jb, jb + nb):
        t = src[s0 + i - jb]
        for j in range(jb, i):
            t -= A[i, j] * dst[d0 + j - jb]
        dst[d0 + i - jb] = t / A[i, i]


@njit(cache=True, nogil=True)
def _trsv_kernel(A, x, NB, W, U, xloads):
    n = x.shape[0]
    for jb in range(0, n, NB):
        nb = min(NB, n - jb)
        _trsv_diag(A, x, jb, jb, nb, x, jb)
        r0 = jb + nb
        if r0 < n:
            _gemv_kernel(A[r0:, jb:r0], x[jb:r0], x[r0:], -1.0, 1.0, W, U, xloads)


# --------------------------------------------------------------------------
# Level 3: packing


@njit(cache=True, nogil=True)
def _pack_a(A, ic, pc, mc, kc, MR, buf, off):
    npan = (mc + MR - 1) // MR
    for p in range(npan):
        base = off + p * MR * kc
        for k in range(kc):
            for r in range(MR):
                i = p * MR + r
                buf[base + k * MR + r] = A[ic + i, pc + k] if i < mc else 0.0


@njit(cache=True, nogil=True)
def _pack_b_panels(B, pc, jc, kc, nc, NR, q0, q1, buf, off):
    for q in range(q0, q1):
        base = off + q * NR * kc
        for k in range(kc):
            for c in range(NR):
                j = q * NR + c
                buf[base + k * NR + c] = B[pc + k, jc + j] if j < nc else 0.0


@njit(cache=True, nogil=True)
def _unpack_a(buf, mc, kc, MR, out):
    npan = (mc + MR - 1) // MR
    for p in range(npan):
        base = p * MR * kc
        for k in range(kc):
            for r in range(MR):
                i = p * MR + r
                if i < mc:
                    out[i, k] = buf[base + k * MR + r]


@njit(cache=True, nogil=True)
def _unpack_b(buf, kc, nc, NR, out):
    npan = (nc + NR - 1) // NR
    for q in range(npan):
        base = q * NR * kc
        for k in range(kc):
            for c in range(NR):
                j = q * NR + c
                if j < nc:
                    out[k, j] = buf[base + k * NR + c]


# --------------------------------------------------------------------------
# Level 3: micro and macro kernels


@njit(cache=True, nogil=True)
def _micro(kc, Ap, aoff, Bp, boff, MR, NR, acc):
    """acc[j*MR + i] = sum_p Ap[aoff + p*MR + i] * Bp[boff + p*NR + j]."""
    for q in range(MR * NR):
        acc[q] = 0.0
    for p in range(kc):
        a0 = aoff + p * MR
        b0 = boff + p * NR
        for j in range(NR):
            b = Bp[b0 + j]
            for i in range(MR):
                acc[j * MR + i] += Ap[a0 + i] * b


@njit(cache=True, nogil=True)
def _macro(Ap, Bp, mc, nc, kc, C, ic, jc, alpha, MR, NR, acc, tiles):
    for jr in range(0, nc, NR):
        nr = min(NR, nc - jr)
        boff = (jr // NR) * NR * kc
        for ir in range(0, mc, MR):
            mr = min(MR, mc - ir)
            aoff = (ir // MR) * MR * kc
            _micro(kc, Ap, aoff, Bp, boff, MR, NR, acc)
            tiles[0] += 1
            for j in range(nr):
                for i in range(mr):
                    C[ic + ir + i, jc + jr + j] = C[ic + ir + i, jc + jr + j] + alpha * acc[j * MR + i]


@njit(cache=True, nogil=True)
def _scale_c(C, beta):
    m, n = C.shape
    if beta == 1.0:
        return
    if beta == 0.0:
        for j in range(n):
            for i in range(m):
                C[i, j] = 0.0
        return
    for j in range(n):
        for i in range(m):
            C[i, j] = beta * C[i, j]


@njit(cache=True, nogil=True)
def _rank_update(A, B, C, alpha, pc, kc, MC, NC, MR, NR, bufA, bufB, acc, tiles):
    """One rank-kc update C += alpha * A[:, pc:pc+kc] @ B[pc:pc+kc, :]."""
    m, n = C.shape
    for jc in range(0, n, NC):
        nc = min(NC, n - jc)
        _pack_b_panels(B, pc, jc, kc, nc, NR, 0, (nc + NR - 1) // NR, bufB, 0)
        for ic in range(0, m, MC):
            mc = min(MC, m - ic)
            _pack_a(A, ic, pc, mc, kc, MR, bufA, 0)
            _macro(bufA, bufB, mc, nc, kc, C, ic, jc, alpha, MR, NR, acc, tiles)


@njit(cache=True, nogil=True)
def _gemm_kernel(A, B, C, alpha, beta, MC, KC, NC, MR, NR, tiles):
    m, n = C.shape
    k = A.shape[1]
    _scale_c(C, beta)
    if alpha == 0.0 or k == 0 or m == 0 or n == 0:
        return
    mcp = ((min(MC, m) + MR - 1) // MR) * MR
    ncp = ((min(NC, n) + NR - 1) // NR) * NR
    kcx = min(KC, k)
    bufA = np.empty(mcp * kcx)
    bufB = np.empty(kcx * ncp)
    acc = np.empty(MR * NR)
    for pc in range(0, k, KC):
        kc = min(KC, k - pc)
        _rank_update(A, B, C, alpha, pc, kc, MC, NC, MR, NR, bufA, bufB, acc, tiles)


# --------------------------------------------------------------------------
# Level 3: triangular solve


@njit(cache=True, nogil=True)
def _pack_a_tri(A, ic, pc, mc, kk, MR, buf):
    """Pack rows ic..ic+mc, columns pc..pc+kk of the lower triangle.

    The diagonal is stored as its reciprocal so the solve multiplies instead
    of dividing; entries above the diagonal and padded rows are zero.
    """
    npan = (mc + MR - 1) // MR
    for p in range(npan):
        base = p * MR * kk
        for k in range(kk):
            col = pc + k
            for r in range(MR):
                i = p * MR + r
                row = ic + i
                if i >= mc or col > row:
                    v = 0.0
                elif col == row:
                    v = 1.0 / A[row, col]
                else:
                    v = A[row, col]
                buf[base + k * MR + r] = v


@njit(cache=True, nogil=True)
def _trsm_macro(Ap, kk, Bp, kcb, mc, nc, off, Bt, b0, jc, MR, NR, acc):
    """Solve rows off..off+mc of the packed right-hand side in place.

    Bp holds the kcb x nc slice being solved; rows above ``off`` are already
    solved. Each M_R x N_R tile first subtracts the product with the solved
    rows (the GEMM micro kernel), then runs substitution against the packed
    diagonal. Solved values are written back both to Bp (so later tiles use
    them) and to Bt[b0 + row, jc + col].
    """
    for jr in range(0, nc, NR):
        nr = min(NR, nc - jr)
        boff = (jr // NR) * NR * kcb
        for ir in range(0, mc, MR):
            mr = min(MR, mc - ir)
            row0 = off + ir
            aoff = (ir // MR) * MR * kk
            _micro(row0, Ap, aoff, Bp, boff, MR, NR, acc)
            for j in range(nr):
                for i in range(mr):
                    v = Bp[boff + (row0 + i) * NR + j] - acc[j * MR + i]
                    for q in range(i):
                        v -= Ap[aoff + (row0 + q) * MR + i] * Bp[boff + (row0 + q) * NR + j]
                    v = v * Ap[aoff + (row0 + i) * MR + i]
                    Bp[boff + (row0 + i) * NR + j] = v
                    Bt[b0 + row0 + i, jc + jr + j] = v


@njit(cache=True, nogil=True)
def _trsm_diag_stage(A, Bt, b0, pc, kc, MC, NC, MR, NR, bufA, bufB, acc):
    """Solve the kc-row diagonal block of A against Bt[b0:b0+kc, :] in place."""
    n = Bt.shape[1]
    for jc in range(0, n, NC):
        nc = min(NC, n - jc)
        _pack_b_panels(Bt, b0, jc, kc, nc, NR, 0, (nc + NR - 1) // NR, bufB, 0)
        for ic in range(pc, pc + kc, MC):
            mc = min(MC, pc + kc - ic)
            kk = ic - pc + mc
            _pack_a_tri(A, ic, pc, mc, kk, MR, bufA)
            _trsm_macro(bufA, kk, bufB, kc, mc, nc, ic - pc, Bt, b0, jc, MR, NR, acc)


def _trsm_buffers(m, n, cfg):
    mcp = ((min(cfg.mc, m) + cfg.mr - 1) // cfg.mr) * cfg.mr
    ncp = ((min(cfg.nc, n) + cfg.nr - 1) // cfg.nr) * cfg.nr
    kcx = min(cfg.kc, m)
    return np.empty(mcp * kcx), np.empty(kcx * ncp), np.empty(cfg.mr * cfg.nr)


# --------------------------------------------------------------------------
# public API


@dataclass
class PackedPanelA:
    """An m_c x k_c block of A re-laid as M_R-row micro-panels (zero-padded)."""

    buffer: np.ndarray
    m_c: int
    k_c: int
    mr: int

    @property
    def m_padded(self) -> int:
        return -(-self.m_c // self.mr) * self.mr

    def unpack(self) -> np.ndarray:
        out = np.zeros((self.m_c, self.k_c), order="F")
        _unpack_a(self.buffer, self.m_c, self.k_c, self.mr, out)
        return out


@dataclass
class PackedPanelB:
    """A k_c x n_c block of B re-laid as N_R-column micro-panels (zero-padded)."""

    buffer: np.ndarray
    k_c: int
    n_c: int
    nr: int

    @property
    def n_padded(self) -> int:
        return -(-self.n_c // self.nr) * self.nr

    def unpack(self) -> np.ndarray:
        out = np.zeros((self.k_c, self.n_c), order="F")
        _unpack_b(self.buffer, self.k_c, self.n_c, self.nr, out)
        return out


def _inplace_vec(x, name="x"):
    x = _vec(x, name)
    if not x.flags.writeable:
        x = x.copy()
    return x


def scal(alpha: float, x, cfg: KernelConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Scale ``x`` in place by ``alpha`` and return it."""
    x = _inplace_vec(x)
    _scal_kernel(float(alpha), x, cfg.lanes, cfg.unroll, cfg.prefetch_dist)
    return x


def dot(x, y, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    x, y = _vec(x), _vec(y, "y")
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(_dot_kernel(x, y, cfg.lanes, cfg.unroll, cfg.prefetch_dist))


def nrm2(x, cfg: KernelConfig = DEFAULT_CONFIG) -> float:
    return float(_nrm2_kernel(_vec(x), cfg.lanes, cfg.unroll, cfg.prefetch_dist))


def _gemv_args(A, x, y):
    A, x, y = _mat(A), _vec(x), _inplace_vec(y, "y")
    if A.shape != (y.shape[0], x.shape[0]):
        raise DimensionError(f"gemv shapes A{A.shape} x({x.shape[0]}) y({y.shape[0]})")
    return A, x, y


def gemv(A, x, y, alpha: float = 1.0, beta: float = 0.0, cfg: KernelConfig = DEFAULT_CONFIG,
         *, counters: dict | None = None) -> np.ndarray:
    """``y := alpha*A@x + beta*y`` in place, four rows per sweep.

    Pass a dict as ``counters`` to receive ``x_loads``: the number of x
    element loads, which is ``ceil(m/4) * n``.
    """
    A, x, y = _gemv_args(A, x, y)
    xl = np.zeros(1, dtype=np.int64)
    _gemv_kernel(A, x, y, float(alpha), float(beta), cfg.lanes, cfg.unroll, xl)
    if counters is not None:
        counters["x_loads"] = int(xl[0])
    return y


def trsv(A, b, cfg: KernelConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Overwrite ``b`` with the solution of ``L x = b`` (L = lower triangle of A)."""
    A, b = _mat(A), _inplace_vec(b, "b")
    _check_lower(A, b.shape[0])
    xl = np.zeros(1, dtype=np.int64)
    _trsv_kernel(A, b, cfg.trsv_block, cfg.lanes, cfg.unroll, xl)
    return b


def pack_a(A, ic: int, pc: int, mc: int, kc: int, cfg: KernelConfig = DEFAULT_CONFIG) -> PackedPanelA:
    A = _mat(A)
    if ic < 0 or pc < 0 or ic + mc > A.shape[0] or pc + kc > A.shape[1]:
        raise DimensionError("block outside A")
    buf = np.empty(-(-mc // cfg.mr) * cfg.mr * kc)
    _pack_a(A, ic, pc, mc, kc, cfg.mr, buf, 0)
    return PackedPanelA(buf, mc, kc, cfg.mr)


def pack_b(B, pc: int, jc: int, kc: int, nc: int, cfg: KernelConfig = DEFAULT_CONFIG) -> PackedPanelB:
    B = _mat(B, "B")
    if pc < 0 or jc < 0 or pc + kc > B.shape[0] or jc + nc > B.shape[1]:
        raise DimensionError("block outside B")
    npan = -(-nc // cfg.nr)
    buf = np.empty(npan * cfg.nr * kc)
    _pack_b_panels(B, pc, jc, kc, nc, cfg.nr, 0, npan, buf, 0)
    return PackedPanelB(buf, kc, nc, cfg.nr)


def _gemm_args(A, B, C):
    A, B, C = _mat(A), _mat(B, "B"), _mat(C, "C")
    if A.shape[1] != B.shape[0] or C.shape != (A.shape[0], B.shape[1]):
        raise DimensionError(f"gemm shapes A{A.shape} B{B.shape} C{C.shape}")
    if not C.flags.writeable:
        C = C.copy(order="F")
    return A, B, C


def gemm(A, B, C, alpha: float = 1.0, beta: float = 0.0, cfg: KernelConfig = DEFAULT_CONFIG,
         *, counters: dict | None = None) -> np.ndarray:
    """``C := alpha*A@B + beta*C`` in place via packed, cache-blocked panels."""
    A, B, C = _gemm_args(A, B, C)
    tiles = np.zeros(1, dtype=np.int64)
    _gemm_kernel(A, B, C, float(alpha), float(beta), cfg.mc, cfg.kc, cfg.nc, cfg.mr, cfg.nr, tiles)
    if counters is not None:
        counters["micro_tiles"] = int(tiles[0])
    return C


def _trsm_args(A, B):
    A, B = _mat(A), _mat(B, "B")
    _check_lower(A, B.shape[0])
    if not B.flags.writeable:
        B = B.copy(order="F")
    return A, B


def trsm(A, B, cfg: KernelConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Overwrite ``B`` with ``L^{-1} B`` (L = lower triangle of A, left side)."""
    A, B = _trsm_args(A, B)
    m, n = B.shape
    if m == 0 or n == 0:
        return B
    bufA, bufB, acc = _trsm_buffers(m, n, cfg)
    tiles = np.zeros(1, dtype=np.int64)
    for pc in range(0, m, cfg.kc):
        kc = min(cfg.kc, m - pc)
        _trsm_diag_stage(A, B, pc, pc, kc, cfg.mc, cfg.nc, cfg.mr, cfg.nr, bufA, bufB, acc)
        r0 = pc + kc
        if r0 < m:
            _gemm_kernel(A[r0:, pc:r0], B[pc:r0, :], B[r0:, :], -1.0, 1.0,
                         cfg.mc, cfg.kc, cfg.nc, cfg.mr, cfg.nr, tiles)
    return B
