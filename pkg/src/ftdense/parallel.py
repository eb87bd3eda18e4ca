"""Fork-join threaded variants.

All compiled kernels release the GIL, so a plain thread pool gives real
parallelism. GEMM follows a two-phase step per (K_C, N_C) block: threads pack
disjoint panel ranges of one shared B buffer, join, and then each thread
updates its own row band of C with a private packed-A buffer.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from . import dmr, kernels
from .abft import ChecksumState, _encode_c, _ft_compute, _pack_b_enc, verify_interval
from .dense_core import DEFAULT_CONFIG, TINY, KernelConfig, _vec
from .dmr import FtReport
from .errors import ChecksumInconsistent, DimensionError, FaultToleranceError
from .injector import Injector, resolve
from .kernels import _gemm_args, _gemv_args, _macro, _pack_a, _pack_b_panels, _scale_c


def _split(total: int, parts: int) -> list[tuple[int, int]]:
    base, extra = divmod(total, parts)
    out, lo = [], 0
    for i in range(parts):
        hi = lo + base + (1 if i < extra else 0)
        out.append((lo, hi))
        lo = hi
    return out


@dataclass(frozen=True)
class ThreadPlan:
    """Row bands of C (one per thread) and column ranges for packing B.

    Empty ranges are allowed: threads beyond the work simply idle.
    """

    t: int
    m_ranges: tuple
    n_pack_ranges: tuple

    @classmethod
    def build(cls, m: int, n: int, t: int, nr: int = 1) -> "ThreadPlan":
        if t < 1:
            raise ValueError("thread count must be >= 1")
        panels = -(-n // nr) if n else 0
        cols = tuple((min(a * nr, n), min(b * nr, n)) for a, b in _split(panels, t))
        return cls(t, tuple(_split(m, t)), cols)

    def validate(self, m: int, n: int):
        for ranges, total in ((self.m_ranges, m), (self.n_pack_ranges, n)):
            pos = 0
            for lo, hi in ranges:
                if lo != pos or hi < lo:
                    raise AssertionError(f"ranges {ranges} do not tile [0, {total})")
                pos = hi
            if pos != total:
                raise AssertionError(f"ranges {ranges} do not tile [0, {total})")


@lru_cache(maxsize=None)
def _pool(t: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=t, thread_name_prefix="ftdense")


def _fork(t: int, fn, items) -> list:
    """Run ``fn`` on every item with up to t threads; join; re-raise the first error."""
    items = list(items)
    if t == 1:
        return [fn(it) for it in items]
    futs = [_pool(t).submit(fn, it) for it in items]
    return [f.result() for f in futs]


def default_threads() -> int:
    return int(os.environ.get("FTDENSE_THREADS", "1"))


def _sub_injectors(inj: Injector | None, t: int) -> list:
    return inj.split(t) if inj is not None else [None] * t


def _merge(reports) -> FtReport:
    out = reports[0]
    for r in reports[1:]:
        out = out + r
    return out


def _adopt(inj: Injector | None, subs) -> None:
    """Append the per-thread injection records to the parent log, in thread order."""
    if inj is not None:
        for sub in subs:
            inj.log.records.extend(sub.log.records)


def _ft_fork(target: str, injector: Injector | None, t: int, fn, ranges):
    inj = resolve(target, injector)
    subs = _sub_injectors(inj, t)
    try:
        return _collect(t, fn, zip(ranges, subs))
    finally:
        _adopt(inj, subs)


def _collect(t: int, fn, items):
    """Fork-join for FT workers that return (value, report) or raise."""
    def guarded(it):
        try:
            return fn(it), None
        except FaultToleranceError as e:
            return (None, e.report or FtReport()), e

    res = _fork(t, guarded, items)
    reports = [r[0][1] for r in res]
    merged = _merge(reports)
    for _, err in res:
        if err is not None:
            err.report = merged
            raise err
    return [r[0][0] for r in res], merged


# --------------------------------------------------------------------------
# Level 1/2


def par_dot(x, y, cfg: KernelConfig = DEFAULT_CONFIG, t: int = 1, *, ft: bool = False,
            injector: Injector | None = None):
    """Chunked dot product; partials are added in thread order."""
    x, y = _vec(x), _vec(y, "y")
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    chunks = _split(x.shape[0], t)
    if not ft:
        parts = _fork(t, lambda r: kernels.dot(x[r[0]:r[1]], y[r[0]:r[1]], cfg), chunks)
        return _sum_ordered(parts)
    parts, rep = _ft_fork("dot", injector, t, lambda a: dmr.ft_dot(x[a[0][0]:a[0][1]], y[a[0][0]:a[0][1]], cfg,
                                                                   injector=a[1]), chunks)
    return _sum_ordered(parts), rep


def _sum_ordered(parts):
    s = parts[0]
    for p in parts[1:]:
        s += p
    return float(s)


def _combine_norms(parts):
    scale = max(parts)
    if scale == 0.0 or not np.isfinite(scale) or len(parts) == 1:
        return float(parts[0]) if len(parts) == 1 else float(scale)
    s = 0.0
    for p in parts:
        r = p / scale
        s += r * r
    return float(scale * np.sqrt(s))


def par_nrm2(x, cfg: KernelConfig = DEFAULT_CONFIG, t: int = 1, *, ft: bool = False,
             injector: Injector | None = None):
    """Chunked norm; partial norms are merged with a scaled combine in thread order."""
    x = _vec(x)
    chunks = _split(x.shape[0], t)
    if not ft:
        return _combine_norms(_fork(t, lambda r: kernels.nrm2(x[r[0]:r[1]], cfg), chunks))
    parts, rep = _ft_fork("nrm2", injector, t, lambda a: dmr.ft_nrm2(x[a[0][0]:a[0][1]], cfg, injector=a[1]),
                          chunks)
    return _combine_norms(parts), rep


def par_gemv(A, x, y, alpha: float = 1.0, beta: float = 0.0, cfg: KernelConfig = DEFAULT_CONFIG, t: int = 1,
             *, ft: bool = False, injector: Injector | None = None):
    """Row-banded gemv; bands are independent, so no reduction is needed."""
    A, x, y = _gemv_args(A, x, y)
    bands = _split(A.shape[0], t)
    if not ft:
        _fork(t, lambda r: kernels.gemv(A[r[0]:r[1]], x, y[r[0]:r[1]], alpha, beta, cfg), bands)
        return y
    _, rep = _ft_fork("gemv", injector, t, lambda a: dmr.ft_gemv(A[a[0][0]:a[0][1]], x, y[a[0][0]:a[0][1]], alpha,
                                                                 beta, cfg, injector=a[1]), bands)
    return y, rep


# --------------------------------------------------------------------------
# Level 3


@njit(cache=True, nogil=True)
def _band_compute(A, C, alpha, pc, kc, jc, nc, r0, r1, MC, MR, NR, bufA, bufB, acc, tiles):
    for ic in range(r0, r1, MC):
        mc = min(MC, r1 - ic)
        _pack_a(A, ic, pc, mc, kc, MR, bufA, 0)
        _macro(bufA, bufB, mc, nc, kc, C, ic, jc, alpha, MR, NR, acc, tiles)


@njit(cache=True, nogil=True)
def _band_claims(writes, m_ranges, n):
    """Count, per C element, how many bands would store to it."""
    for b in range(m_ranges.shape[0]):
        for j in range(n):
            for i in range(m_ranges[b, 0], m_ranges[b, 1]):
                writes[i, j] += 1


def _thread_bufs(plan, m, n, k, cfg, extra=0):
    kcx = min(cfg.kc, k) if k else 0
    bufs = []
    for lo, hi in plan.m_ranges:
        mcp = -(-min(cfg.mc, max(hi - lo, 1)) // cfg.mr) * cfg.mr
        bufs.append((np.empty(mcp * kcx + extra * kcx), np.empty(cfg.mr * cfg.nr),
                     np.empty(max(cfg.mr, cfg.nr)), np.zeros(1, dtype=np.int64)))
    ncp = -(-min(cfg.nc, n) // cfg.nr) * cfg.nr
    return bufs, np.empty(kcx * ncp + extra * kcx)


def _panel_ranges(nc, nr, t):
    return _split(-(-nc // nr), t)


def par_gemm(A, B, C, alpha: float = 1.0, beta: float = 0.0, cfg: KernelConfig = DEFAULT_CONFIG, t: int = 1, *,
             counters: dict | None = None):
    """Threaded GEMM; bitwise equal to :func:`ftdense.kernels.gemm`."""
    A, B, C = _gemm_args(A, B, C)
    m, n = C.shape
    k = A.shape[1]
    plan = ThreadPlan.build(m, n, t, cfg.nr)
    plan.validate(m, n)
    alpha, beta = float(alpha), float(beta)
    _fork(t, lambda r: _scale_c(C[r[0]:r[1]], beta), plan.m_ranges)
    if counters is not None:
        writes = np.zeros((m, n), dtype=np.int64)
        _band_claims(writes, np.array(plan.m_ranges, dtype=np.int64).reshape(-1, 2), n)
        counters["max_writers"] = int(writes.max(initial=0))
    if alpha == 0.0 or k == 0 or m == 0 or n == 0:
        return C
    bufs, bufB = _thread_bufs(plan, m, n, k, cfg)
    for pc in range(0, k, cfg.kc):
        kc = min(cfg.kc, k - pc)
        for jc in range(0, n, cfg.nc):
            nc = min(cfg.nc, n - jc)
            _fork(t, lambda q: _pack_b_panels(B, pc, jc, kc, nc, cfg.nr, q[0], q[1], bufB, 0),
                  _panel_ranges(nc, cfg.nr, t))

            def compute(i):
                r0, r1 = plan.m_ranges[i]
                bufA, acc, _, tiles = bufs[i]
                _band_compute(A, C, alpha, pc, kc, jc, nc, r0, r1, cfg.mc, cfg.mr, cfg.nr, bufA, bufB, acc, tiles)

            _fork(t, compute, range(t))
    if counters is not None:
        counters["micro_tiles"] = int(sum(b[3][0] for b in bufs))
    return C


def par_ft_gemm(A, B, C, alpha: float = 1.0, beta: float = 0.0, cfg: KernelConfig = DEFAULT_CONFIG, t: int = 1, *,
                injector: Injector | None = None) -> tuple[np.ndarray, FtReport]:
    """Threaded checksum-protected GEMM.

    Each thread keeps row checksums for its own band plus that band's share of
    the column checksums, and verifies its band after every rank-K_C update
    (so one error per band per interval is correctable). The per-band column
    residuals are then summed in thread order as a global consistency check.
    """
    A, B, C = _gemm_args(A, B, C)
    m, n = C.shape
    k = A.shape[1]
    plan = ThreadPlan.build(m, n, t, cfg.nr)
    plan.validate(m, n)
    alpha, beta = float(alpha), float(beta)
    kcx = min(cfg.kc, k) if k else 0
    states = [ChecksumState.zeros(hi - lo, n, max(kcx, 1), row0=lo) for lo, hi in plan.m_ranges]

    def encode(i):
        lo, hi = plan.m_ranges[i]
        st = states[i]
        _encode_c(C[lo:hi], beta, st.c_col, st.c_row, st.absref_row)

    _fork(t, encode, range(t))
    reports = [FtReport() for _ in range(t)]
    inj = resolve("gemm", injector)
    subs = _sub_injectors(inj, t)
    if alpha == 0.0 or k == 0 or m == 0 or n == 0:
        return C, _merge(reports)
    bufs, bufB = _thread_bufs(plan, m, n, k, cfg, extra=1)
    try:
        parts = np.zeros((t, kcx))
        for s, pc in enumerate(range(0, k, cfg.kc)):
            kc = min(cfg.kc, k - pc)
            for st in states:
                st.a_col[:kc] = 0.0
            for jc in range(0, n, cfg.nc):
                nc = min(cfg.nc, n - jc)
                pranges = _panel_ranges(nc, cfg.nr, t)
                npan = -(-nc // cfg.nr)
                bext = npan * cfg.nr * kc
                _fork(t, lambda i: _pack_b_enc(B, pc, jc, kc, nc, cfg.nr, pranges[i][0], pranges[i][1], bufB,
                                               parts[i, :kc]), range(t))
                # reduce the partial row sums of B in ascending thread order
                bufB[bext:bext + kc] = parts[0, :kc]
                for i in range(1, t):
                    bufB[bext:bext + kc] += parts[i, :kc]

                def compute(i):
                    r0, r1 = plan.m_ranges[i]
                    bufA, acc, acc1, tiles = bufs[i]
                    st = states[i]
                    aext = -(-min(cfg.mc, max(r1 - r0, 1)) // cfg.mr) * cfg.mr * kc
                    _ft_compute(A, C, alpha, pc, kc, jc, nc, r0, r1, cfg.mc, cfg.mr, cfg.nr, bufA, bufB, acc, acc1,
                                tiles, aext, bext, r0, st.c_col, st.c_row, st.c_col_ref, st.c_row_ref,
                                st.absref_row, st.absref_col, st.a_col[:kc])

                _fork(t, compute, range(t))
            _verify_bands(C, states, plan, pc + kc, s, cfg, subs, reports)
        for sub, rep in zip(subs, reports):
            if sub is not None:
                sub.report_surplus(rep.intervals_verified)
    finally:
        _adopt(inj, subs)
    return C, _merge(reports)


def _verify_bands(C, states, plan, k_done, s, cfg, subs, reports):
    dcol = np.zeros(C.shape[1])
    tcol = np.zeros(C.shape[1])
    for i, st in enumerate(states):
        lo, hi = plan.m_ranges[i]
        st.k_done = k_done
        if hi == lo:
            st.reset_refs()
            continue
        if subs[i] is not None:
            subs[i].abft_fire(C, s, state=st, c_tol=cfg.c_tol, rows=(lo, hi))
        rep = reports[i]
        try:
            corrs, worst = verify_interval(st, cfg, interval=s, reset=False)
        except FaultToleranceError as e:
            rep.errors_detected += 1
            e.report = _merge(reports)
            raise
        for c in corrs:
            c.apply(C)
            st.c_col_ref[c.j_err] -= c.magnitude
        rep.intervals_verified += 1
        rep.errors_detected += len(corrs)
        rep.errors_corrected += len(corrs)
        rep.corrections.extend(corrs)
        rep.max_residual_ratio = max(rep.max_residual_ratio, worst)
        dcol += st.c_col_ref - st.c_col
        tcol += st.tau_col(cfg.c_tol)
        st.reset_refs()
    bad = np.flatnonzero(~(np.abs(dcol) <= np.maximum(tcol, TINY)))
    if bad.size:
        raise ChecksumInconsistent(f"interval {s}: global column checksums disagree at {bad[:5].tolist()}",
                                   _merge(reports))
