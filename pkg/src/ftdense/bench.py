"""Measurement harness: size sweeps, repetition statistics, GFLOPS, overhead.

Flop conventions (also written into every CSV row as ``flop_model``):
scal n, dot 2n, nrm2 2n, gemv 2mn, trsv n^2, gemm 2mnk, trsm m^2 n.
For the matrix routines a sweep size ``s`` means m = n = k = s.
"""
from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import abft, bounds, dmr, kernels, parallel
from .dense_core import (DEFAULT_CONFIG, KernelConfig, oracle_dot, oracle_gemm, oracle_gemv, oracle_nrm2,
                         oracle_scal)
from .errors import OracleMismatch
from .injector import FaultPlan, Injector

ROUTINES = ("scal", "dot", "nrm2", "gemv", "trsv", "gemm", "trsm")
PARALLEL = ("dot", "nrm2", "gemv", "gemm")
FLOP_MODEL = {"scal": "n", "dot": "2n", "nrm2": "2n", "gemv": "2mn", "trsv": "n^2", "gemm": "2mnk",
              "trsm": "m^2n"}
ALPHA, BETA = 1.5, 0.5


def flops(routine: str, m: int, n: int, k: int) -> float:
    return {"scal": n, "dot": 2 * n, "nrm2": 2 * n, "gemv": 2 * m * n, "trsv": n * n,
            "gemm": 2 * m * n * k, "trsm": m * m * n}[routine]


def dims(routine: str, size: int) -> tuple[int, int, int]:
    if routine in ("scal", "dot", "nrm2"):
        return 1, size, 1
    if routine in ("gemv", "trsv"):
        return size, size, 1
    return size, size, size


@dataclass
class BenchSpec:
    routine: str
    sizes: list
    reps: int = 20
    ft: bool = False
    plan: FaultPlan | None = None
    threads: int = 1
    cfg: KernelConfig = DEFAULT_CONFIG
    output: str | None = None
    seed: int = 0
    paired: bool = True
    inject_count: int = 0
    inject_interval: int = 0  # 0 spreads inject_count evenly over the intervals

    def __post_init__(self):
        if self.routine not in ROUTINES:
            raise ValueError(f"unknown routine {self.routine!r}; choose from {ROUTINES}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not self.sizes or any(int(s) < 1 for s in self.sizes):
            raise ValueError("sizes must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        self.sizes = sorted(int(s) for s in self.sizes)


@dataclass
class BenchRecord:
    routine: str
    m: int
    n: int
    k: int
    threads: int
    ft: bool
    reps: int
    injected: int
    corrected: int
    mean_time: float
    median_time: float
    std_time: float
    mean_gflops: float
    std_gflops: float
    overhead: float | None
    correct: bool | None
    flop_model: str = ""
    detected: int = 0
    times: list = field(default_factory=list, repr=False)


CSV_COLUMNS = [f.name for f in dataclasses.fields(BenchRecord) if f.name != "times"]


# --------------------------------------------------------------------------
# inputs, calls and oracle checks


def make_inputs(routine: str, size: int, rng: np.random.Generator) -> dict:
    m, n, k = dims(routine, size)
    if routine == "scal":
        return {"x": rng.uniform(-1, 1, n)}
    if routine == "dot":
        return {"x": rng.uniform(-1, 1, n), "y": rng.uniform(-1, 1, n)}
    if routine == "nrm2":
        return {"x": rng.uniform(-1, 1, n)}
    if routine == "gemv":
        return {"A": np.asfortranarray(rng.uniform(-1, 1, (m, n))), "x": rng.uniform(-1, 1, n),
                "y": rng.uniform(-1, 1, m)}
    if routine == "trsv":
        L = np.tril(rng.uniform(-1, 1, (n, n))) + n * np.eye(n)
        return {"A": np.asfortranarray(L), "b": rng.uniform(-1, 1, n)}
    if routine == "gemm":
        return {"A": np.asfortranarray(rng.uniform(-1, 1, (m, k))), "B": np.asfortranarray(rng.uniform(-1, 1, (k, n))),
                "C": np.asfortranarray(rng.uniform(-1, 1, (m, n)))}
    L = np.tril(rng.uniform(-1, 1, (m, m))) + m * np.eye(m)
    return {"A": np.asfortranarray(L), "B": np.asfortranarray(rng.uniform(-1, 1, (m, n)))}


_INOUT = {"scal": "x", "gemv": "y", "trsv": "b", "gemm": "C", "trsm": "B"}


def _fresh(routine: str, inputs: dict) -> dict:
    key = _INOUT.get(routine)
    if key is None:
        return inputs
    d = dict(inputs)
    d[key] = inputs[key].copy(order="F" if inputs[key].ndim == 2 else "C")
    return d


def call(routine: str, d: dict, cfg: KernelConfig, *, ft: bool = False, threads: int = 1,
         injector: Injector | None = None):
    """Run one routine variant; returns (result, FtReport or None)."""
    par = threads > 1 and routine in PARALLEL
    if routine == "scal":
        return dmr.ft_scal(ALPHA, d["x"], cfg, injector=injector) if ft else (kernels.scal(ALPHA, d["x"], cfg), None)
    if routine == "dot":
        if par:
            return parallel.par_dot(d["x"], d["y"], cfg, threads, ft=True, injector=injector) if ft else \
                (parallel.par_dot(d["x"], d["y"], cfg, threads), None)
        return dmr.ft_dot(d["x"], d["y"], cfg, injector=injector) if ft else (kernels.dot(d["x"], d["y"], cfg), None)
    if routine == "nrm2":
        if par:
            return parallel.par_nrm2(d["x"], cfg, threads, ft=True, injector=injector) if ft else \
                (parallel.par_nrm2(d["x"], cfg, threads), None)
        return dmr.ft_nrm2(d["x"], cfg, injector=injector) if ft else (kernels.nrm2(d["x"], cfg), None)
    if routine == "gemv":
        args = (d["A"], d["x"], d["y"], ALPHA, BETA, cfg)
        if par:
            return parallel.par_gemv(*args, threads, ft=True, injector=injector) if ft else \
                (parallel.par_gemv(*args, threads), None)
        return dmr.ft_gemv(*args, injector=injector) if ft else (kernels.gemv(*args), None)
    if routine == "trsv":
        return dmr.ft_trsv(d["A"], d["b"], cfg, injector=injector) if ft else (kernels.trsv(d["A"], d["b"], cfg), None)
    if routine == "gemm":
        args = (d["A"], d["B"], d["C"], ALPHA, BETA, cfg)
        if par:
            return parallel.par_ft_gemm(*args, threads, injector=injector) if ft else \
                (parallel.par_gemm(*args, threads), None)
        return abft.ft_gemm(*args, injector=injector) if ft else (kernels.gemm(*args), None)
    return abft.ft_trsm(d["A"], d["B"], cfg, injector=injector) if ft else (kernels.trsm(d["A"], d["B"], cfg), None)


def oracle_ratio(routine: str, inputs: dict, result) -> float:
    """Observed error over the documented bound (<= 1 passes)."""
    if routine == "scal":
        return bounds.scal_ratio(result, ALPHA, oracle_scal(1.0, inputs["x"]))
    if routine == "dot":
        return bounds.dot_ratio(result, inputs["x"], inputs["y"], oracle_dot(inputs["x"], inputs["y"]))
    if routine == "nrm2":
        return bounds.nrm2_ratio(result, inputs["x"], oracle_nrm2(inputs["x"]))
    if routine == "gemv":
        A, x, y = inputs["A"], inputs["x"], inputs["y"]
        return bounds.gemv_ratio(result, A, x, y, ALPHA, BETA, oracle_gemv(A, x, y, ALPHA, BETA))
    if routine == "trsv":
        return bounds.trsv_ratio(inputs["A"], result, inputs["b"])
    if routine == "gemm":
        A, B, C = inputs["A"], inputs["B"], inputs["C"]
        return bounds.gemm_ratio(result, A, B, C, ALPHA, BETA, oracle_gemm(A, B, C, ALPHA, BETA))
    return bounds.trsm_ratio(inputs["A"], result, inputs["B"])


def count_intervals(routine: str, size: int, cfg: KernelConfig) -> int:
    m, n, k = dims(routine, size)
    if routine == "gemm":
        return abft.count_gemm_intervals(k, cfg)
    if routine == "trsm":
        return -(-m // cfg.kc)
    if routine == "gemv":
        return dmr.count_intervals("gemv", (m, n), cfg)
    return dmr.count_intervals(routine, n, cfg)


def plan_for(routine: str, size: int, cfg: KernelConfig, count: int, interval_k: int = 0, seed: int = 0,
             **kw) -> FaultPlan:
    """A plan spreading ``count`` errors evenly (``interval_k=0``) over the available intervals."""
    side = "abft_c_entry" if routine in ("gemm", "trsm") else "dmr_primary"
    kw.setdefault("side", side)
    if interval_k <= 0:
        interval_k = max(1, count_intervals(routine, size, cfg) // max(count, 1))
    return FaultPlan(routine, count, interval_k, seed, **kw)


# --------------------------------------------------------------------------
# sweeps


def _time_reps(routine, inputs, cfg, reps, *, ft, threads, plan, base=None):
    """Time ``reps`` calls after one warm-up. With a ``base`` list, an
    unprotected call is timed right after each one (interleaved pairs keep
    drift out of the overhead)."""
    times, report, result = [], None, None
    for _ in range(reps + 1):
        d = _fresh(routine, inputs)
        inj = Injector(plan) if plan is not None else None
        t0 = time.perf_counter()
        result, report = call(routine, d, cfg, ft=ft, threads=threads, injector=inj)
        times.append(time.perf_counter() - t0)
        if base is not None:
            d = _fresh(routine, inputs)
            t0 = time.perf_counter()
            call(routine, d, cfg, ft=False, threads=threads, injector=None)
            base.append(time.perf_counter() - t0)
    if base is not None:
        del base[0]
    return np.array(times[1:]), result, report, inj


def run(spec: BenchSpec) -> list[BenchRecord]:
    """Time every size; verify the smallest against the oracle."""
    rng = np.random.default_rng(spec.seed)
    threads = spec.threads if spec.routine in PARALLEL else 1
    out = []
    for idx, size in enumerate(spec.sizes):
        m, n, k = dims(spec.routine, size)
        inputs = make_inputs(spec.routine, size, rng)
        plan = spec.plan
        if plan is None and spec.inject_count > 0:
            plan = plan_for(spec.routine, size, spec.cfg, spec.inject_count, spec.inject_interval, spec.seed)
        base = [] if spec.ft and spec.paired else None
        times, result, report, inj = _time_reps(spec.routine, inputs, spec.cfg, spec.reps, ft=spec.ft,
                                                threads=threads, plan=plan if spec.ft else None, base=base)
        correct = None
        if idx == 0:
            ratio = oracle_ratio(spec.routine, inputs, result)
            correct = ratio <= 1.0
            if not correct:
                raise OracleMismatch(
                    f"{spec.routine}{' (ft)' if spec.ft else ''} size {size}: error is {ratio:.3g}x the "
                    f"allowed bound (threads={threads}, cfg={spec.cfg})")
        overhead = None
        if base is not None:
            overhead = float(times.mean() / np.mean(base) - 1.0)
        fl = flops(spec.routine, m, n, k)
        gf = fl / times / 1e9
        out.append(BenchRecord(
            spec.routine, m, n, k, threads, spec.ft, spec.reps,
            injected=len(inj.log) if inj is not None else 0,
            corrected=report.errors_corrected if report is not None else 0,
            mean_time=float(times.mean()), median_time=float(np.median(times)), std_time=float(times.std()),
            mean_gflops=fl / float(times.mean()) / 1e9, std_gflops=float(gf.std()), overhead=overhead,
            correct=correct, flop_model=FLOP_MODEL[spec.routine],
            detected=report.errors_detected if report is not None else 0,
            times=times.tolist()))
    if spec.output:
        emit_csv(out, spec.output)
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_csv(records, path) -> None:
    """Header plus one row per record; floats are written with repr (round-trip exact)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def measure_gemv_gflops(size: int, cfg: KernelConfig = DEFAULT_CONFIG, reps: int = 5, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    inputs = make_inputs("gemv", size, rng)
    times, _, _, _ = _time_reps("gemv", inputs, cfg, reps, ft=False, threads=1, plan=None)
    return flops("gemv", size, size, 1) / float(np.median(times)) / 1e9


def overhead_report(plain, ft, *, cfg: KernelConfig = DEFAULT_CONFIG, mv_gflops: float | None = None) -> dict:
    """Per-size and aggregate overhead of ``ft`` against ``plain`` records.

    For gemm sweeps each row also carries the predicted overhead of an
    unfused checksum scheme, using the measured GEMM rate and a gemv rate
    (measured at that size unless ``mv_gflops`` is given).
    """
    by_size = {(r.routine, r.m, r.n, r.k): r for r in plain}
    rows = []
    for r in ft:
        key = (r.routine, r.m, r.n, r.k)
        if key not in by_size:
            raise ValueError(f"no plain record for {r.routine} {r.m}x{r.n}x{r.k}")
        p = by_size[key]
        row = {"routine": r.routine, "m": r.m, "n": r.n, "k": r.k, "plain_time": p.mean_time,
               "ft_time": r.mean_time, "overhead": r.mean_time / p.mean_time - 1.0}
        if r.routine == "gemm":
            pmv = mv_gflops if mv_gflops is not None else measure_gemv_gflops(r.n, cfg)
            row["perf_ratio"] = p.mean_gflops / pmv
            row["predicted_unfused"] = abft.estimate_abft_overhead(r.n, r.k, min(cfg.kc, r.k), p.mean_gflops, pmv)
        rows.append(row)
    if len(rows) != len(plain):
        raise ValueError("plain and ft sweeps cover different sizes")
    total_p = sum(x["plain_time"] for x in rows)
    total_f = sum(x["ft_time"] for x in rows)
    return {"rows": rows, "aggregate": (total_f / total_p - 1.0) if rows else 0.0}
