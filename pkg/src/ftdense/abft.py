"""Online checksum protection for GEMM and the GEMM updates inside TRSM.

Packing appends one extra micro-row to each packed A block (its column sums)
and one extra micro-column to each packed B slice (its row sums). Running
the ordinary micro kernel over those extras yields the updates of the
maintained checksums ``c_row = C e`` and ``c_col = e^T C``. While each C tile
is stored, the fresh values are also folded into reference sums, so after
every rank-K_C update the maintained and reference checksums can be compared
without another pass over C.

A single corrupted entry shows up as one bad row sum and one bad column sum;
their intersection locates it and the row-sum difference is its magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .dense_core import DEFAULT_CONFIG, TINY, UNIT_ROUNDOFF, KernelConfig
from .dmr import FtReport
from .errors import ChecksumInconsistent, DimensionError, MultipleErrors, Unrecoverable
from .injector import Injector, resolve
from .kernels import (PackedPanelA, PackedPanelB, _gemm_args, _micro,
                      _rank_update, _scale_c, _trsm_args, _trsm_buffers, _trsm_diag_stage, gemv)

# --------------------------------------------------------------------------
# data types


@dataclass
class ChecksumState:
    """Maintained and reference checksums of C (or of a row band of C).

    Row quantities are indexed locally: entry ``r`` describes row ``row0 + r``.
    ``k_done`` is the K extent accumulated so far; it scales the tolerance.
    """

    c_col: np.ndarray
    c_row: np.ndarray
    c_col_ref: np.ndarray
    c_row_ref: np.ndarray
    absref_row: np.ndarray
    absref_col: np.ndarray
    a_col: np.ndarray
    b_row: np.ndarray
    row0: int = 0
    k_done: int = 0

    @classmethod
    def zeros(cls, rows: int, n: int, kc: int, row0: int = 0) -> "ChecksumState":
        z = np.zeros
        return cls(z(n), z(rows), z(n), z(rows), z(rows), z(n), z(kc), z(kc), row0)

    @property
    def m(self) -> int:
        return self.c_row.shape[0]

    @property
    def n(self) -> int:
        return self.c_col.shape[0]

    # every term folded into a row sum: k_done products for each of n columns
    def tau_row(self, c_tol: float) -> np.ndarray:
        return c_tol * UNIT_ROUNDOFF * (self.k_done + self.n) * np.maximum(self.absref_row, TINY)

    def tau_col(self, c_tol: float) -> np.ndarray:
        return c_tol * UNIT_ROUNDOFF * (self.k_done + self.m) * np.maximum(self.absref_col, TINY)

    def tau_at(self, i: int, j: int, c_tol: float) -> float:
        r = i - self.row0
        return float(max(self.tau_row(c_tol)[r], self.tau_col(c_tol)[j]))

    def reset_refs(self):
        for a in (self.c_col_ref, self.c_row_ref, self.absref_row, self.absref_col):
            a[:] = 0.0

    def absorb_fault(self, i: int, j: int, orig: float, new: float):
        """Account for a compute fault whose wrong value fed the reference sums too."""
        r = i - self.row0
        self.c_row_ref[r] += new - orig
        self.c_col_ref[j] += new - orig
        self.absref_row[r] += abs(new) - abs(orig)
        self.absref_col[j] += abs(new) - abs(orig)


@dataclass
class EncodedPanelA:
    panel: PackedPanelA
    a_col: np.ndarray


@dataclass
class EncodedPanelB:
    panel: PackedPanelB
    b_row: np.ndarray


@dataclass(frozen=True)
class Correction:
    i_err: int
    j_err: int
    magnitude: float
    interval: int

    def apply(self, C):
        C[self.i_err, self.j_err] -= self.magnitude


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def _encode_c(C, beta, c_col, c_row, abs_row):
    m, n = C.shape
    for j in range(n):
        if beta == 0.0:
            for i in range(m):
                C[i, j] = 0.0
            continue
        if beta != 1.0:
            for i in range(m):
                C[i, j] = beta * C[i, j]
        s = 0.0
        for i in range(m):
            v = C[i, j]
            c_row[i] += v
            abs_row[i] += abs(v)
            s += v
        c_col[j] += s


@njit(cache=True, nogil=True)
def _pack_a_enc(A, ic, pc, mc, kc, MR, buf, ext):
    """Pack like ``_pack_a`` and add each loaded valid element into buf[ext + k]."""
    for k in range(kc):
        buf[ext + k] = 0.0
    npan = (mc + MR - 1) // MR
    for p in range(npan):
        base = p * MR * kc
        for k in range(kc):
            for r in range(MR):
                i = p * MR + r
                if i < mc:
                    v = A[ic + i, pc + k]
                    buf[base + k * MR + r] = v
                    buf[ext + k] += v
                else:
                    buf[base + k * MR + r] = 0.0


@njit(cache=True, nogil=True)
def _pack_b_enc(B, pc, jc, kc, nc, NR, q0, q1, buf, part):
    """Pack panels q0..q1 like ``_pack_b_panels``; row sums go to ``part``."""
    for k in range(kc):
        part[k] = 0.0
    for q in range(q0, q1):
        base = q * NR * kc
        for k in range(kc):
            for c in range(NR):
                j = q * NR + c
                if j < nc:
                    v = B[pc + k, jc + j]
                    buf[base + k * NR + c] = v
                    part[k] += v
                else:
                    buf[base + k * NR + c] = 0.0


@njit(cache=True, nogil=True)
def _ft_macro(Ap, Bp, mc, nc, kc, C, ic, jc, alpha, MR, NR, acc, acc1, tiles, aext, bext, row0,
              c_col, c_row, c_col_ref, c_row_ref, abs_row, abs_col, col_update):
    """Plain macro kernel plus checksum updates from the encoded extras and
    reference sums taken from each fresh C value as it is stored.

    With ``col_update`` false the extra A row is left to the caller, which
    applies it once for all row blocks (see ``_col_checksum_update``).
    """
    for jr in range(0, nc, NR):
        nr = min(NR, nc - jr)
        boff = (jr // NR) * NR * kc
        for ir in range(0, mc, MR):
            mr = min(MR, mc - ir)
            aoff = (ir // MR) * MR * kc
            _micro(kc, Ap, aoff, Bp, boff, MR, NR, acc)
            tiles[0] += 1
            for j in range(nr):
                cj = jc + jr + j
                cs = 0.0
                ca = 0.0
                for i in range(mr):
                    ci = ic + ir + i
                    v = C[ci, cj] + alpha * acc[j * MR + i]
                    C[ci, cj] = v
                    c_row_ref[ci - row0] += v
                    abs_row[ci - row0] += abs(v)
                    cs += v
                    ca += abs(v)
                c_col_ref[cj] += cs
                abs_col[cj] += ca
        if col_update:
            # extra row of the product: column checksum update
            _micro(kc, Ap, aext, Bp, boff, 1, NR, acc1)
            for j in range(nr):
                c_col[jc + jr + j] += alpha * acc1[j]
    # extra column of the product: row checksum update
    for ir in range(0, mc, MR):
        mr = min(MR, mc - ir)
        _micro(kc, Ap, (ir // MR) * MR * kc, Bp, bext, MR, 1, acc1)
        for i in range(mr):
            c_row[ic + ir + i - row0] += alpha * acc1[i]


@njit(cache=True, nogil=True)
def _col_checksum_update(a_col, Bp, nc, kc, jc, alpha, NR, acc1, c_col):
    """Extra row ``a_col`` (column sums of every packed A block of the band)
    times each packed B panel, through the same micro kernel."""
    for jr in range(0, nc, NR):
        nr = min(NR, nc - jr)
        _micro(kc, a_col, 0, Bp, (jr // NR) * NR * kc, 1, NR, acc1)
        for j in range(nr):
            c_col[jc + jr + j] += alpha * acc1[j]


@njit(cache=True, nogil=True)
def _ft_compute(A, C, alpha, pc, kc, jc, nc, r0, r1, MC, MR, NR, bufA, bufB, acc, acc1, tiles, aext, bext,
                row0, c_col, c_row, c_col_ref, c_row_ref, abs_row, abs_col, a_col):
    """Rows r0..r1 of one (pc, jc) step, reading the already-packed B slice.

    The A column sums of the slice are recorded into ``a_col`` on the first
    jc step only (later steps repack the same rows); the column checksums
    are then updated once from them instead of once per row block.
    """
    for ic in range(r0, r1, MC):
        mc = min(MC, r1 - ic)
        _pack_a_enc(A, ic, pc, mc, kc, MR, bufA, aext)
        if jc == 0:
            for k in range(kc):
                a_col[k] += bufA[aext + k]
        _ft_macro(bufA, bufB, mc, nc, kc, C, ic, jc, alpha, MR, NR, acc, acc1, tiles, aext, bext, row0,
                  c_col, c_row, c_col_ref, c_row_ref, abs_row, abs_col, False)
    if r1 > r0:
        _col_checksum_update(a_col, bufB, nc, kc, jc, alpha, NR, acc1, c_col)


@njit(cache=True, nogil=True)
def _ft_rank_update(A, B, C, alpha, pc, kc, MC, NC, MR, NR, bufA, bufB, acc, acc1, tiles,
                    c_col, c_row, c_col_ref, c_row_ref, abs_row, abs_col, a_col, b_row):
    m, n = C.shape
    for k in range(kc):
        a_col[k] = 0.0
        b_row[k] = 0.0
    mcp = ((min(MC, m) + MR - 1) // MR) * MR
    aext = mcp * kc
    for jc in range(0, n, NC):
        nc = min(NC, n - jc)
        npan = (nc + NR - 1) // NR
        bext = npan * NR * kc
        _pack_b_enc(B, pc, jc, kc, nc, NR, 0, npan, bufB, bufB[bext:bext + kc])
        for k in range(kc):
            b_row[k] += bufB[bext + k]
        _ft_compute(A, C, alpha, pc, kc, jc, nc, 0, m, MC, MR, NR, bufA, bufB, acc, acc1, tiles, aext, bext,
                    0, c_col, c_row, c_col_ref, c_row_ref, abs_row, abs_col, a_col)


@njit(cache=True, nogil=True)
def _row_sums(C, out, absout):
    m, n = C.shape
    for j in range(n):
        for i in range(m):
            out[i] += C[i, j]
            absout[i] += abs(C[i, j])


@njit(cache=True, nogil=True)
def _col_sums(C, out, absout):
    m, n = C.shape
    for j in range(n):
        s = 0.0
        a = 0.0
        for i in range(m):
            s += C[i, j]
            a += abs(C[i, j])
        out[j] += s
        absout[j] += a


# --------------------------------------------------------------------------
# public building blocks


def _bufs(m, n, k, cfg):
    mcp = -(-min(cfg.mc, m) // cfg.mr) * cfg.mr
    ncp = -(-min(cfg.nc, n) // cfg.nr) * cfg.nr
    kcx = min(cfg.kc, k)
    return (np.empty(mcp * kcx + kcx), np.empty(kcx * ncp + kcx),
            np.empty(cfg.mr * cfg.nr), np.empty(max(cfg.mr, cfg.nr)))


def encode_c_checksums(C, beta: float, cfg: KernelConfig = DEFAULT_CONFIG) -> ChecksumState:
    """Scale C by beta in place and start its checksums in the same pass."""
    if C.ndim != 2:
        raise DimensionError("C must be a matrix")
    m, n = C.shape
    st = ChecksumState.zeros(m, n, cfg.kc)
    _encode_c(C, float(beta), st.c_col, st.c_row, st.absref_row)
    return st


def pack_a_encoded(A, ic: int, pc: int, mc: int, kc: int, cfg: KernelConfig = DEFAULT_CONFIG) -> EncodedPanelA:
    A = np.asarray(A, dtype=np.float64)
    if ic < 0 or pc < 0 or ic + mc > A.shape[0] or pc + kc > A.shape[1]:
        raise DimensionError("block outside A")
    mp = -(-mc // cfg.mr) * cfg.mr
    buf = np.empty(mp * kc + kc)
    _pack_a_enc(A, ic, pc, mc, kc, cfg.mr, buf, mp * kc)
    return EncodedPanelA(PackedPanelA(buf[: mp * kc], mc, kc, cfg.mr), buf[mp * kc:])


def pack_b_encoded(B, pc: int, jc: int, kc: int, nc: int, cfg: KernelConfig = DEFAULT_CONFIG) -> EncodedPanelB:
    B = np.asarray(B, dtype=np.float64)
    if pc < 0 or jc < 0 or pc + kc > B.shape[0] or jc + nc > B.shape[1]:
        raise DimensionError("block outside B")
    npan = -(-nc // cfg.nr)
    buf = np.empty(npan * cfg.nr * kc + kc)
    ext = npan * cfg.nr * kc
    _pack_b_enc(B, pc, jc, kc, nc, cfg.nr, 0, npan, buf, buf[ext:])
    return EncodedPanelB(PackedPanelB(buf[:ext], kc, nc, cfg.nr), buf[ext:])


def ft_macro_kernel(Ae: EncodedPanelA, Be: EncodedPanelB, C_block, state: ChecksumState,
                    alpha: float = 1.0, cfg: KernelConfig = DEFAULT_CONFIG, *, ic: int = 0, jc: int = 0):
    """Update ``C_block[ic:ic+m_c, jc:jc+n_c] += alpha * A B`` with checksum upkeep.

    ``state`` indices refer to the whole of ``C_block``.
    """
    pa, pb = Ae.panel, Be.panel
    if pa.k_c != pb.k_c:
        raise DimensionError("panels come from different K slices")
    Ap = np.concatenate([pa.buffer, Ae.a_col])
    Bp = np.concatenate([pb.buffer, Be.b_row])
    tiles = np.zeros(1, dtype=np.int64)
    _ft_macro(Ap, Bp, pa.m_c, pb.n_c, pa.k_c, C_block, ic, jc, float(alpha), pa.mr, pb.nr,
              np.empty(pa.mr * pb.nr), np.empty(max(pa.mr, pb.nr)), tiles, pa.buffer.size, pb.buffer.size,
              state.row0, state.c_col, state.c_row, state.c_col_ref, state.c_row_ref,
              state.absref_row, state.absref_col, True)
    state.k_done += pa.k_c
    return C_block, state


def verify_interval(state: ChecksumState, cfg: KernelConfig = DEFAULT_CONFIG, *, interval: int = 0,
                    reset: bool = True, check_cols: bool = True) -> tuple[list, float]:
    """Compare maintained against reference checksums after one rank-K_C update.

    Returns ``(corrections, worst residual/tau ratio)``. Row sums are checked
    first; a row mismatch triggers the column check that locates the entry.
    """
    try:
        tr = state.tau_row(cfg.c_tol)
        dr = state.c_row_ref - state.c_row
        ratio_r = np.abs(dr) / tr
        bad_r = np.flatnonzero(~(np.abs(dr) <= tr))
        if bad_r.size == 0:
            worst = float(ratio_r.max(initial=0.0))
            if check_cols:
                worst = max(worst, float((np.abs(state.c_col_ref - state.c_col) / state.tau_col(cfg.c_tol))
                                         .max(initial=0.0)))
            return [], worst
        tc = state.tau_col(cfg.c_tol)
        dc = state.c_col_ref - state.c_col
        bad_c = np.flatnonzero(~(np.abs(dc) <= tc))
        if bad_r.size > 1 or bad_c.size > 1:
            raise MultipleErrors(
                f"interval {interval}: {bad_r.size} row and {bad_c.size} column checksum mismatches")
        if bad_c.size == 0:
            raise ChecksumInconsistent(f"interval {interval}: row {state.row0 + int(bad_r[0])} mismatches "
                                       "but no column does")
        r, j = int(bad_r[0]), int(bad_c[0])
        if not abs(dr[r] - dc[j]) <= 4.0 * max(tr[r], tc[j]):
            raise ChecksumInconsistent(
                f"interval {interval}: row residual {dr[r]!r} and column residual {dc[j]!r} disagree")
        return [Correction(state.row0 + r, j, float(dr[r]), interval)], float(ratio_r.max())
    finally:
        if reset:
            state.reset_refs()


def estimate_abft_overhead(n: float, K: float, K_C: float, P_mm: float, P_mv: float) -> float:
    """Predicted overhead fraction of non-fused online ABFT.

    The unfused scheme makes ``6 + 2K/K_C`` extra passes over an n x n
    operand, each about as costly as a matrix-vector product (``2 n**2`` flops
    at rate ``P_mv``). Against the ``2 n**2 K`` flops of the product at
    ``P_mm``, and taking ``K`` close to ``n``, the fraction is
    ``(6 + 2K/K_C) * (P_mm/P_mv) / n``.
    """
    for name, v in (("n", n), ("K", K), ("K_C", K_C), ("P_mm", P_mm), ("P_mv", P_mv)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    return (6.0 + 2.0 * K / K_C) * (P_mm / P_mv) / n


# --------------------------------------------------------------------------
# drivers


def _run_interval(C, state, cfg, inj, interval, report, *, rows=None):
    if inj is not None:
        inj.abft_fire(C, interval, state=state, c_tol=cfg.c_tol, rows=rows)
    try:
        corrs, worst = verify_interval(state, cfg, interval=interval)
    except (MultipleErrors, ChecksumInconsistent) as e:
        report.errors_detected += 1
        report.intervals_verified += 1
        e.report = report
        raise
    for c in corrs:
        c.apply(C)
    report.intervals_verified += 1
    report.errors_detected += len(corrs)
    report.errors_corrected += len(corrs)
    report.corrections.extend(corrs)
    report.max_residual_ratio = max(report.max_residual_ratio, worst)


def _ft_gemm_core(A, B, C, alpha, beta, cfg, inj, report, tiles, *, interval0=0):
    m, n = C.shape
    k = A.shape[1]
    state = encode_c_checksums(C, beta, cfg)
    if alpha == 0.0 or k == 0 or m == 0 or n == 0:
        return 0
    bufA, bufB, acc, acc1 = _bufs(m, n, k, cfg)
    count = 0
    for s, pc in enumerate(range(0, k, cfg.kc)):
        kc = min(cfg.kc, k - pc)
        _ft_rank_update(A, B, C, alpha, pc, kc, cfg.mc, cfg.nc, cfg.mr, cfg.nr, bufA, bufB, acc, acc1, tiles,
                        state.c_col, state.c_row, state.c_col_ref, state.c_row_ref,
                        state.absref_row, state.absref_col, state.a_col[:kc], state.b_row[:kc])
        state.k_done = pc + kc
        _run_interval(C, state, cfg, inj, interval0 + s, report)
        count += 1
    return count


def _ft_gemm_unfused(A, B, C, alpha, beta, cfg, inj, report, tiles):
    """Same protection with every checksum step as its own pass (for comparison)."""
    m, n = C.shape
    k = A.shape[1]
    st = ChecksumState.zeros(m, n, cfg.kc)
    _scale_c(C, beta)
    _row_sums(C, st.c_row, st.absref_row)
    _col_sums(C, st.c_col, st.absref_col)
    st.absref_row[:] = 0.0
    st.absref_col[:] = 0.0
    if alpha == 0.0 or k == 0 or m == 0 or n == 0:
        return 0
    mcp = -(-min(cfg.mc, m) // cfg.mr) * cfg.mr
    ncp = -(-min(cfg.nc, n) // cfg.nr) * cfg.nr
    kcx = min(cfg.kc, k)
    bufA, bufB, acc = np.empty(mcp * kcx), np.empty(kcx * ncp), np.empty(cfg.mr * cfg.nr)
    ones_m, ones_n = np.ones(m), np.ones(n)
    count = 0
    for s, pc in enumerate(range(0, k, cfg.kc)):
        kc = min(cfg.kc, k - pc)
        As, Bs = A[:, pc:pc + kc], B[pc:pc + kc, :]
        a_col = gemv(As.T, ones_m, np.zeros(kc), 1.0, 0.0, cfg)
        b_row = gemv(Bs, ones_n, np.zeros(kc), 1.0, 0.0, cfg)
        _rank_update(A, B, C, float(alpha), pc, kc, cfg.mc, cfg.nc, cfg.mr, cfg.nr, bufA, bufB, acc, tiles)
        gemv(Bs.T, a_col, st.c_col, alpha, 1.0, cfg)
        gemv(As, b_row, st.c_row, alpha, 1.0, cfg)
        _row_sums(C, st.c_row_ref, st.absref_row)
        _col_sums(C, st.c_col_ref, st.absref_col)
        st.k_done = pc + kc
        _run_interval(C, st, cfg, inj, s, report)
        count += 1
    return count


def ft_gemm(A, B, C, alpha: float = 1.0, beta: float = 0.0, cfg: KernelConfig = DEFAULT_CONFIG, *,
            injector: Injector | None = None, fused: bool = True,
            counters: dict | None = None) -> tuple[np.ndarray, FtReport]:
    """Checksum-protected ``C := alpha*A@B + beta*C`` in place.

    One verification per rank-K_C update; a single corrupted entry per
    interval is located and corrected. ``fused=False`` runs the same scheme
    with separate passes for scaling, encoding and reference sums.
    """
    A, B, C = _gemm_args(A, B, C)
    inj = resolve("gemm", injector)
    report = FtReport()
    tiles = np.zeros(1, dtype=np.int64)
    run = _ft_gemm_core if fused else _ft_gemm_unfused
    run(A, B, C, float(alpha), float(beta), cfg, inj, report, tiles)
    if inj is not None:
        inj.report_surplus(report.intervals_verified)
    if counters is not None:
        counters["micro_tiles"] = int(tiles[0])
    return C, report


def count_gemm_intervals(k: int, cfg: KernelConfig = DEFAULT_CONFIG) -> int:
    return -(-k // cfg.kc)


def _diag_stage_dmr(A, B, pc, kc, cfg, bufs, inj, s, report):
    bufA, bufB, acc = bufs
    chk = np.array(B[pc:pc + kc, :], order="F")

    def evaluate():
        P = chk.copy(order="F")
        _trsm_diag_stage(A, P, 0, pc, kc, cfg.mc, cfg.nc, cfg.mr, cfg.nr, bufA, bufB, acc)
        if inj is not None and inj.plan.side == "dmr_primary":
            inj.seam(P.ravel(order="F"), s)
        S = chk.copy(order="F")
        _trsm_diag_stage(A, S, 0, pc, kc, cfg.mc, cfg.nc, cfg.mr, cfg.nr, bufA, bufB, acc)
        return P, np.array_equal(P.view(np.int64), S.view(np.int64))

    P, ok = evaluate()
    report.intervals_verified += 1
    if not ok:
        report.errors_detected += 1
        P, ok = evaluate()
        if not ok:
            report.unrecoverable = True
            raise Unrecoverable(f"diagonal block at row {pc}: recomputed solves still disagree", report)
        report.errors_corrected += 1
    B[pc:pc + kc, :] = P


def ft_trsm(A, B, cfg: KernelConfig = DEFAULT_CONFIG, *,
            injector: Injector | None = None) -> tuple[np.ndarray, FtReport]:
    """Protected ``B := L^{-1} B``.

    Diagonal-block solves run twice and are compared (one recompute on
    mismatch); the trailing GEMM updates carry checksums like :func:`ft_gemm`.
    Step ``s`` (the s-th K_C block row) is the injection iteration for both.
    """
    A, B = _trsm_args(A, B)
    m, n = B.shape
    inj = resolve("trsm", injector)
    report = FtReport()
    if m == 0 or n == 0:
        return B, report
    bufs = _trsm_buffers(m, n, cfg)
    tiles = np.zeros(1, dtype=np.int64)
    abft_inj = inj if inj is not None and inj.plan.side == "abft_c_entry" else None
    for s, pc in enumerate(range(0, m, cfg.kc)):
        kc = min(cfg.kc, m - pc)
        _diag_stage_dmr(A, B, pc, kc, cfg, bufs, inj, s, report)
        r0 = pc + kc
        if r0 < m:
            _ft_gemm_core(A[r0:, pc:r0], B[pc:r0, :], B[r0:, :], -1.0, 1.0, cfg, abft_inj, report, tiles,
                          interval0=s)
    if inj is not None:
        inj.report_surplus(-(-m // cfg.kc))
    return B, report
