"""Duplication-protected Level-1/2 routines.

Each verification interval (U lane blocks of W doubles) is evaluated twice:
the primary result passes through the injector seam, the shadow result does
not, and the two are compared bit for bit. Per-block lane masks are
AND-reduced so a single branch per interval decides whether the handler runs.
The handler restores the interval's checkpointed inputs and recomputes both
results once; if they still disagree the fault is treated as persistent.

Both evaluations call the same arithmetic helpers as the plain kernels in
:mod:`ftdense.kernels`, so a fault-free protected run is bitwise identical
to the unprotected one.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np
from numba import njit, types
from numba.extending import intrinsic

from .dense_core import DEFAULT_CONFIG, KernelConfig, _check_lower, _mat, _vec
from .errors import DetectedButUncorrected, DimensionError, Unrecoverable
from .injector import Injector, disarmed_seam, resolve
from .injector import _seam
from .kernels import (ROWS_PER_SWEEP, _absmax, _dot_chunk, _dot_tail, _gemv_args, _gemv_chunk,
                      _gemv_finish, _hsum, _inplace_vec, _prefetch, _scal_block, _ssq_chunk,
                      _ssq_tail, _trsv_diag)

# slots of the int64 status array shared by every protected kernel
_N_INT, _N_DET, _N_COR, _N_HIT, _N_BAD = range(5)


# --------------------------------------------------------------------------
# report and mask types


@dataclass
class FtReport:
    """What a protected call verified, found and repaired."""

    intervals_verified: int = 0
    errors_detected: int = 0
    errors_corrected: int = 0
    unrecoverable: bool = False
    detect_only_hits: int = 0
    corrections: list = field(default_factory=list)
    max_residual_ratio: float = 0.0
    threads: int = 1

    def __add__(self, other: "FtReport") -> "FtReport":
        return FtReport(
            self.intervals_verified + other.intervals_verified,
            self.errors_detected + other.errors_detected,
            self.errors_corrected + other.errors_corrected,
            self.unrecoverable or other.unrecoverable,
            self.detect_only_hits + other.detect_only_hits,
            self.corrections + other.corrections,
            max(self.max_residual_ratio, other.max_residual_ratio),
            self.threads + other.threads,
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "corrections"}

    @classmethod
    def from_status(cls, status: np.ndarray) -> "FtReport":
        return cls(int(status[_N_INT]), int(status[_N_DET]), int(status[_N_COR]),
                   bool(status[_N_BAD]), int(status[_N_HIT]))


@dataclass(frozen=True)
class CompareMask:
    """W lanes, True where primary and shadow agreed bitwise in every block."""

    lanes: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(self.lanes.all())

    def __and__(self, other: "CompareMask") -> "CompareMask":
        return CompareMask(self.lanes & other.lanes)


@dataclass(frozen=True)
class Checkpoint:
    """Inputs of one interval, captured before its outputs are committed."""

    inputs: np.ndarray
    iteration: int = 0


def compare_blocks(primary, shadow, lanes: int = 8) -> list[CompareMask]:
    """Per-lane-block bitwise masks; a ragged last block pads with agreeing lanes."""
    p = np.ascontiguousarray(primary, dtype=np.float64).view(np.int64)
    s = np.ascontiguousarray(shadow, dtype=np.float64).view(np.int64)
    if p.shape != s.shape:
        raise DimensionError("primary and shadow outputs differ in shape")
    out = []
    for b in range(0, p.size, lanes):
        m = np.ones(lanes, dtype=bool)
        seg = slice(b, min(b + lanes, p.size))
        m[: seg.stop - seg.start] = p[seg] == s[seg]
        out.append(CompareMask(m))
    return out


def reduce_masks(masks) -> CompareMask:
    """AND-reduce block masks into the single mask branched on per interval."""
    masks = list(masks)
    if not masks:
        raise ValueError("need at least one mask")
    acc = masks[0]
    for m in masks[1:]:
        acc = acc & m
    return acc


# --------------------------------------------------------------------------
# generic single-interval protocol (python level)


def _seam_of(injector: Injector | None):
    return injector.seam_tuple() if injector is not None else disarmed_seam()


def dmr_interval(primary_eval, shadow_eval, inputs, cfg: KernelConfig = DEFAULT_CONFIG, *,
                 injector: Injector | None = None, iteration: int = 0):
    """Evaluate one interval twice and return ``(primary outputs, reduced mask)``.

    ``primary_eval`` and ``shadow_eval`` map an input array to an output array.
    Only the primary result is exposed to ``injector``.
    """
    chk = np.array(inputs, dtype=np.float64, copy=True)
    out_p = np.array(primary_eval(chk.copy()), dtype=np.float64, copy=True).ravel()
    if injector is not None:
        injector.seam(out_p, iteration)
    out_s = np.asarray(shadow_eval(chk.copy()), dtype=np.float64).ravel()
    return out_p, reduce_masks(compare_blocks(out_p, out_s, cfg.lanes))


def recover_interval(chk, primary_eval, shadow_eval, cfg: KernelConfig = DEFAULT_CONFIG, *,
                     mask: CompareMask | None = None, outputs=None,
                     injector: Injector | None = None, iteration: int = 0):
    """Recompute an interval from its checkpoint with duplication.

    Raises :class:`Unrecoverable` when the recomputed pair still disagrees.
    With an all-true ``mask`` nothing is recomputed and ``outputs`` come back as given.
    """
    if mask is not None and mask.ok:
        return outputs
    inputs = chk.inputs if isinstance(chk, Checkpoint) else chk
    out, again = dmr_interval(primary_eval, shadow_eval, inputs, cfg,
                              injector=injector, iteration=iteration)
    if not again.ok:
        raise Unrecoverable(f"interval {iteration}: recomputed results still disagree")
    return out


# --------------------------------------------------------------------------
# compiled helpers


@njit(cache=True, nogil=True, inline="always")
def _agree(pi, si, o, cnt):
    """Bitwise compare of cnt values on int64 views.

    The OR of the lane XORs is zero exactly when every per-block lane mask is
    all-true, so this is the AND-reduced interval mask in a single register.
    """
    d = 0
    for q in range(cnt):
        d |= pi[o + q] ^ si[o + q]
    return d == 0


@intrinsic
def _bits(typingctx, v):
    """Bit pattern of a float64 as int64, kept in a register."""
    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], context.get_value_type(types.int64))
    return types.int64(types.float64), codegen


@njit(cache=True, nogil=True, inline="always")
def _shadow_scal_agree(alpha, src, s0, pi, cnt):
    """Shadow ``alpha*src`` recomputed and compared bitwise against the
    primary bits ``pi`` on the fly, so no shadow buffer is written."""
    d = 0
    for q in range(cnt):
        d |= pi[q] ^ _bits(alpha * src[s0 + q])
    return d == 0


@njit(cache=True, nogil=True, inline="always")
def _mismatch(rep, detect_only):
    """Book a detection; True when the caller should recompute."""
    rep[_N_DET] += 1
    if detect_only:
        rep[_N_HIT] += 1
        return False
    return True


@njit(cache=True, nogil=True, inline="always")
def _recomputed(rep, ok):
    if ok:
        rep[_N_COR] += 1
        return True
    rep[_N_BAD] = 1
    return False


@njit(cache=True, nogil=True, inline="always")
def _copy(src, s0, dst, d0, cnt):
    for q in range(cnt):
        dst[d0 + q] = src[s0 + q]


# --------------------------------------------------------------------------
# Each routine has its hot path written out inline in the kernel (the seam
# tuple must not cross an inlined call, or every trip pays for it) and a
# separate ``_redo_*`` that re-runs one interval with duplication for the
# error handler.


@njit(cache=True, nogil=True)
def _redo_scal(alpha, src, s0, outp, pi, cnt, t, armed, inj):
    _scal_block(alpha, src, s0, outp, 0, cnt)
    if armed:
        _seam(outp, 0, cnt, t, inj)
    return _shadow_scal_agree(alpha, src, s0, pi, cnt)


@njit(cache=True, nogil=True)
def _ft_scal_kernel(alpha, x, W, U, pf, detect_only, inj, rep):
    """Duplicated multiply, compare, then store.

    The interval's slice of x is its checkpoint: nothing is written back
    until the compare has passed, so a recompute reads the original inputs.
    """
    n = x.shape[0]
    B = W * U
    nint = n // B
    armed = inj[0].shape[0] != 0
    outp = np.empty(B)
    pi = outp.view(np.int64)
    for t in range(nint):
        base = t * B
        if pf > 0:
            for u in range(0, U, 2):
                p = base + u * W + pf
                if p < n:
                    _prefetch(x, p)
        _scal_block(alpha, x, base, outp, 0, B)
        if armed:
            _seam(outp, 0, B, t, inj)
        if not _shadow_scal_agree(alpha, x, base, pi, B) and _mismatch(rep, detect_only):
            if not _recomputed(rep, _redo_scal(alpha, x, base, outp, pi, B, t, armed, inj)):
                rep[_N_INT] += t + 1
                return
        _copy(outp, 0, x, base, B)
    rep[_N_INT] += nint
    base = nint * B
    cnt = n - base
    if cnt > 0:
        # scalar epilogue is its own interval
        rep[_N_INT] += 1
        ok = _redo_scal(alpha, x, base, outp, pi, cnt, nint, armed, inj)
        if not ok and _mismatch(rep, detect_only):
            if not _recomputed(rep, _redo_scal(alpha, x, base, outp, pi, cnt, nint, armed, inj)):
                return
        _copy(outp, 0, x, base, cnt)


@njit(cache=True, nogil=True)
def _ft_scal_pipelined_kernel(alpha, x, W, U, pf, detect_only, inj, rep):
    """Interval t is computed while interval t-1 waits in flight; t-1 is
    checked (and repaired from its checkpoint) before its deferred store."""
    n = x.shape[0]
    B = W * U
    nint = n // B
    armed = inj[0].shape[0] != 0
    chk_c = np.empty(B)
    chk_p = np.empty(B)
    outp_c = np.empty(B)
    outp_p = np.empty(B)
    pi_c = outp_c.view(np.int64)
    pi_p = outp_p.view(np.int64)
    ok_p = True
    for t in range(nint):
        base = t * B
        if pf > 0:
            for u in range(0, U, 2):
                p = base + u * W + pf
                if p < n:
                    _prefetch(x, p)
        # L (+ checkpoint), M1, M2, C for interval t
        _copy(x, base, chk_c, 0, B)
        _scal_block(alpha, chk_c, 0, outp_c, 0, B)
        if armed:
            _seam(outp_c, 0, B, t, inj)
        ok_c = _shadow_scal_agree(alpha, chk_c, 0, pi_c, B)
        rep[_N_INT] += 1
        # S for interval t-1, once its mask has been looked at
        if t > 0:
            if not ok_p and _mismatch(rep, detect_only):
                if not _recomputed(rep, _redo_scal(alpha, chk_p, 0, outp_p, pi_p, B, t - 1, armed, inj)):
                    return
            _copy(outp_p, 0, x, base - B, B)
        chk_c, chk_p = chk_p, chk_c
        outp_c, outp_p = outp_p, outp_c
        pi_c, pi_p = pi_p, pi_c
        ok_p = ok_c
    if nint > 0:
        if not ok_p and _mismatch(rep, detect_only):
            if not _recomputed(rep, _redo_scal(alpha, chk_p, 0, outp_p, pi_p, B, nint - 1, armed, inj)):
                return
        _copy(outp_p, 0, x, (nint - 1) * B, B)
    cnt = n - nint * B
    if cnt > 0:
        _copy(x, nint * B, chk_c, 0, cnt)
        rep[_N_INT] += 1
        ok = _redo_scal(alpha, chk_c, 0, outp_c, pi_c, cnt, nint, armed, inj)
        if not ok and _mismatch(rep, detect_only):
            if not _recomputed(rep, _redo_scal(alpha, chk_c, 0, outp_c, pi_c, cnt, nint, armed, inj)):
                return
        _copy(outp_c, 0, x, nint * B, cnt)


# --------------------------------------------------------------------------
# dot / nrm2: accumulator intervals, then one checked reduction unit


@njit(cache=True, nogil=True)
def _redo_dot(x, y, base, acc, outp, pi, outs, si, B, t, armed, inj):
    _dot_chunk(x, y, base, acc, outp, B)
    if armed:
        _seam(outp, 0, B, t, inj)
    _dot_chunk(x, y, base, acc, outs, B)
    return _agree(pi, si, 0, B)


@njit(cache=True, nogil=True)
def _dot_final(x, y, acc, B, i0, n, rp, rs, t, armed, inj):
    rp[0] = _dot_tail(x, y, _hsum(acc, B), i0, n)
    if armed:
        _seam(rp, 0, 1, t, inj)
    rs[0] = _dot_tail(x, y, _hsum(acc, B), i0, n)
    return rp.view(np.int64)[0] == rs.view(np.int64)[0]


@njit(cache=True, nogil=True)
def _ft_dot_kernel(x, y, W, U, pf, detect_only, inj, rep):
    n = x.shape[0]
    B = W * U
    nint = n // B
    armed = inj[0].shape[0] != 0
    acc = np.zeros(B)  # committed accumulators double as the checkpoint
    outp = np.empty(B)
    outs = np.empty(B)
    pi = outp.view(np.int64)
    si = outs.view(np.int64)
    for t in range(nint):
        base = t * B
        if pf > 0 and base + pf < n:
            _prefetch(x, base + pf)
            _prefetch(y, base + pf)
        _dot_chunk(x, y, base, acc, outp, B)
        if armed:
            _seam(outp, 0, B, t, inj)
        _dot_chunk(x, y, base, acc, outs, B)
        if not _agree(pi, si, 0, B) and _mismatch(rep, detect_only):
            if not _recomputed(rep, _redo_dot(x, y, base, acc, outp, pi, outs, si, B, t, armed, inj)):
                rep[_N_INT] += t + 1
                return 0.0
        _copy(outp, 0, acc, 0, B)
    rep[_N_INT] += nint + 1
    # horizontal reduction + scalar tail, cross-checked against the shadow reduction
    rp = np.empty(1)
    rs = np.empty(1)
    if not _dot_final(x, y, acc, B, nint * B, n, rp, rs, nint, armed, inj) and _mismatch(rep, detect_only):
        if not _recomputed(rep, _dot_final(x, y, acc, B, nint * B, n, rp, rs, nint, armed, inj)):
            return 0.0
    return rp[0]


@njit(cache=True, nogil=True)
def _redo_ssq(x, scale, base, acc, outp, pi, outs, si, B, t, armed, inj):
    _ssq_chunk(x, scale, base, acc, outp, B)
    if armed:
        _seam(outp, 0, B, t, inj)
    _ssq_chunk(x, scale, base, acc, outs, B)
    return _agree(pi, si, 0, B)


@njit(cache=True, nogil=True)
def _nrm2_final(x, scale, acc, B, i0, n, rp, rs, t, armed, inj):
    rp[0] = scale * np.sqrt(_ssq_tail(x, scale, _hsum(acc, B), i0, n))
    if armed:
        _seam(rp, 0, 1, t, inj)
    rs[0] = scale * np.sqrt(_ssq_tail(x, scale, _hsum(acc, B), i0, n))
    return rp.view(np.int64)[0] == rs.view(np.int64)[0]


@njit(cache=True, nogil=True)
def _ft_nrm2_kernel(x, W, U, pf, detect_only, inj, rep):
    # the max-abs scan only selects a scaling factor; it is not duplicated
    scale = _absmax(x)
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    n = x.shape[0]
    B = W * U
    nint = n // B
    armed = inj[0].shape[0] != 0
    acc = np.zeros(B)
    outp = np.empty(B)
    outs = np.empty(B)
    pi = outp.view(np.int64)
    si = outs.view(np.int64)
    for t in range(nint):
        base = t * B
        if pf > 0 and base + pf < n:
            _prefetch(x, base + pf)
        _ssq_chunk(x, scale, base, acc, outp, B)
        if armed:
            _seam(outp, 0, B, t, inj)
        _ssq_chunk(x, scale, base, acc, outs, B)
        if not _agree(pi, si, 0, B) and _mismatch(rep, detect_only):
            if not _recomputed(rep, _redo_ssq(x, scale, base, acc, outp, pi, outs, si, B, t, armed, inj)):
                rep[_N_INT] += t + 1
                return 0.0
        _copy(outp, 0, acc, 0, B)
    rep[_N_INT] += nint + 1
    rp = np.empty(1)
    rs = np.empty(1)
    if not _nrm2_final(x, scale, acc, B, nint * B, n, rp, rs, nint, armed, inj) and _mismatch(rep, detect_only):
        if not _recomputed(rep, _nrm2_final(x, scale, acc, B, nint * B, n, rp, rs, nint, armed, inj)):
            return 0.0
    return rp[0]


# --------------------------------------------------------------------------
# gemv / trsv


@njit(cache=True, nogil=True)
def _redo_gemv(A, x, i0, rb, j0, W, U, acc, outp, pi, outs, si, t, armed, inj):
    _gemv_chunk(A, x, i0, rb, j0, W, U, acc, outp)
    if armed:
        _seam(outp, 0, rb * W, t, inj)
    _gemv_chunk(A, x, i0, rb, j0, W, U, acc, outs)
    return _agree(pi, si, 0, rb * W)


@njit(cache=True, nogil=True)
def _gemv_final(A, x, y, i0, rb, j1, n, alpha, beta, acc, W, fp, fpi, fs, fsi, t, armed, inj):
    _gemv_finish(A, x, y, i0, rb, j1, n, alpha, beta, acc, W, fp, 0)
    if armed:
        _seam(fp, 0, rb, t, inj)
    _gemv_finish(A, x, y, i0, rb, j1, n, alpha, beta, acc, W, fs, 0)
    return _agree(fpi, fsi, 0, rb)


@njit(cache=True, nogil=True)
def _ft_gemv_core(A, x, y, alpha, beta, W, U, detect_only, inj, rep, t):
    """Protected gemv numbering its intervals from ``t``; returns the next free
    interval number, or -1 after an unrecoverable fault."""
    m, n = A.shape
    B = W * U
    nch = n // B
    j1 = nch * B
    R = ROWS_PER_SWEEP
    armed = inj[0].shape[0] != 0
    acc = np.zeros(R * W)
    outp = np.empty(R * W)
    outs = np.empty(R * W)
    pi = outp.view(np.int64)
    si = outs.view(np.int64)
    fp = np.empty(R)
    fs = np.empty(R)
    fpi = fp.view(np.int64)
    fsi = fs.view(np.int64)
    for i0 in range(0, m, R):
        rb = min(R, m - i0)
        for q in range(rb * W):
            acc[q] = 0.0
        for c in range(nch):
            _gemv_chunk(A, x, i0, rb, c * B, W, U, acc, outp)
            if armed:
                _seam(outp, 0, rb * W, t, inj)
            _gemv_chunk(A, x, i0, rb, c * B, W, U, acc, outs)
            rep[_N_INT] += 1
            if not _agree(pi, si, 0, rb * W) and _mismatch(rep, detect_only):
                if not _recomputed(rep, _redo_gemv(A, x, i0, rb, c * B, W, U, acc, outp, pi, outs, si, t,
                                                   armed, inj)):
                    return -1
            _copy(outp, 0, acc, 0, rb * W)
            t += 1
        # reduction, column tail and y update: scalar duplication
        rep[_N_INT] += 1
        if (not _gemv_final(A, x, y, i0, rb, j1, n, alpha, beta, acc, W, fp, fpi, fs, fsi, t, armed, inj)
                and _mismatch(rep, detect_only)):
            if not _recomputed(rep, _gemv_final(A, x, y, i0, rb, j1, n, alpha, beta, acc, W, fp, fpi, fs,
                                                fsi, t, armed, inj)):
                return -1
        _copy(fp, 0, y, i0, rb)
        t += 1
    return t


@njit(cache=True, nogil=True)
def _ft_gemv_kernel(A, x, y, alpha, beta, W, U, detect_only, inj, rep):
    _ft_gemv_core(A, x, y, alpha, beta, W, U, detect_only, inj, rep, 0)


@njit(cache=True, nogil=True)
def _diag_unit(A, chk, jb, nb, dp, dpi, ds, dsi, t, armed, inj):
    _trsv_diag(A, chk, 0, jb, nb, dp, 0)
    if armed:
        _seam(dp, 0, nb, t, inj)
    _trsv_diag(A, chk, 0, jb, nb, ds, 0)
    return _agree(dpi, dsi, 0, nb)


@njit(cache=True, nogil=True)
def _ft_trsv_kernel(A, x, NB, W, U, detect_only, inj, rep):
    n = x.shape[0]
    armed = inj[0].shape[0] != 0
    chk = np.empty(NB)
    dp = np.empty(NB)
    ds = np.empty(NB)
    dpi = dp.view(np.int64)
    dsi = ds.view(np.int64)
    t = 0
    for jb in range(0, n, NB):
        nb = min(NB, n - jb)
        _copy(x, jb, chk, 0, nb)
        rep[_N_INT] += 1
        # the block is verified before any panel consumes it
        if not _diag_unit(A, chk, jb, nb, dp, dpi, ds, dsi, t, armed, inj) and _mismatch(rep, detect_only):
            if not _recomputed(rep, _diag_unit(A, chk, jb, nb, dp, dpi, ds, dsi, t, armed, inj)):
                return
        _copy(dp, 0, x, jb, nb)
        t += 1
        r0 = jb + nb
        if r0 < n:
            t = _ft_gemv_core(A[r0:, jb:r0], x[jb:r0], x[r0:], -1.0, 1.0, W, U, detect_only, inj, rep, t)
            if t < 0:
                return


# --------------------------------------------------------------------------
# interval bookkeeping


def count_intervals(routine: str, shape, cfg: KernelConfig = DEFAULT_CONFIG) -> int:
    """Number of verification intervals a protected routine runs for ``shape``.

    ``shape`` is ``n`` for the vector routines, ``(m, n)`` for gemv and ``n``
    for trsv. This is the iteration count injection plans are laid out on.
    """
    B = cfg.interval
    if routine == "scal":
        return -(-int(shape) // B)
    if routine in ("dot", "nrm2"):
        return int(shape) // B + 1
    if routine == "gemv":
        m, n = shape
        return -(-m // ROWS_PER_SWEEP) * (n // B + 1)
    if routine == "trsv":
        n = int(shape)
        total = 0
        for jb in range(0, n, cfg.trsv_block):
            nb = min(cfg.trsv_block, n - jb)
            total += 1 + count_intervals("gemv", (n - jb - nb, nb), cfg)
        return total
    raise ValueError(f"unknown routine {routine!r}")


# --------------------------------------------------------------------------
# public API


def _finish(status, injector, available, cfg, name) -> FtReport:
    report = FtReport.from_status(status)
    if injector is not None:
        injector.sync()
        injector.report_surplus(available)
    if report.unrecoverable:
        raise Unrecoverable(f"{name}: recomputation did not clear the fault", report)
    if report.detect_only_hits:
        raise DetectedButUncorrected(
            f"{name}: {report.detect_only_hits} mismatches detected in detect-only mode", report)
    return report


def _status():
    return np.zeros(5, dtype=np.int64)


def ft_scal(alpha: float, x, cfg: KernelConfig = DEFAULT_CONFIG, *,
            injector: Injector | None = None, pipelined: bool = False) -> tuple[np.ndarray, FtReport]:
    """Scale ``x`` in place with every multiply duplicated and verified.

    ``pipelined=True`` keeps one interval in flight and verifies it while the
    next one computes, storing it only afterwards. Both schedules produce the
    same results and reports; the default is faster under numba.
    """
    x = _inplace_vec(x)
    inj = resolve("scal", injector)
    st = _status()
    kern = _ft_scal_pipelined_kernel if pipelined else _ft_scal_kernel
    kern(float(alpha), x, cfg.lanes, cfg.unroll, cfg.prefetch_dist, cfg.is_detect_only, _seam_of(inj), st)
    return x, _finish(st, inj, count_intervals("scal", x.shape[0], cfg), cfg, "ft_scal")


def ft_dot(x, y, cfg: KernelConfig = DEFAULT_CONFIG, *,
           injector: Injector | None = None) -> tuple[float, FtReport]:
    x, y = _vec(x), _vec(y, "y")
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    inj = resolve("dot", injector)
    st = _status()
    r = _ft_dot_kernel(x, y, cfg.lanes, cfg.unroll, cfg.prefetch_dist, cfg.is_detect_only,
                       _seam_of(inj), st)
    return float(r), _finish(st, inj, count_intervals("dot", x.shape[0], cfg), cfg, "ft_dot")


def ft_nrm2(x, cfg: KernelConfig = DEFAULT_CONFIG, *,
            injector: Injector | None = None) -> tuple[float, FtReport]:
    x = _vec(x)
    inj = resolve("nrm2", injector)
    st = _status()
    r = _ft_nrm2_kernel(x, cfg.lanes, cfg.unroll, cfg.prefetch_dist, cfg.is_detect_only,
                        _seam_of(inj), st)
    avail = count_intervals("nrm2", x.shape[0], cfg) if st[_N_INT] else 0
    return float(r), _finish(st, inj, avail, cfg, "ft_nrm2")


def ft_gemv(A, x, y, alpha: float = 1.0, beta: float = 0.0, cfg: KernelConfig = DEFAULT_CONFIG, *,
            injector: Injector | None = None) -> tuple[np.ndarray, FtReport]:
    """Protected ``y := alpha*A@x + beta*y`` (in place)."""
    A, x, y = _gemv_args(A, x, y)
    inj = resolve("gemv", injector)
    st = _status()
    _ft_gemv_kernel(A, x, y, float(alpha), float(beta), cfg.lanes, cfg.unroll, cfg.is_detect_only,
                    _seam_of(inj), st)
    return y, _finish(st, inj, count_intervals("gemv", A.shape, cfg), cfg, "ft_gemv")


def ft_trsv(A, b, cfg: KernelConfig = DEFAULT_CONFIG, *,
            injector: Injector | None = None) -> tuple[np.ndarray, FtReport]:
    """Protected forward substitution; overwrites ``b``."""
    A, b = _mat(A), _inplace_vec(b, "b")
    _check_lower(A, b.shape[0])
    inj = resolve("trsv", injector)
    st = _status()
    _ft_trsv_kernel(A, b, cfg.trsv_block, cfg.lanes, cfg.unroll, cfg.is_detect_only,
                    _seam_of(inj), st)
    return b, _finish(st, inj, count_intervals("trsv", b.shape[0], cfg), cfg, "ft_trsv")
