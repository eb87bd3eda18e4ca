"""``ftdense`` command line: ``bench``, ``inject`` and ``verify``.

Every flag can also be set through an environment variable named
``FTDENSE_`` plus the upper-cased flag (``--inject-count`` reads
``FTDENSE_INJECT_COUNT``). Explicit flags win over the environment.

Exit codes: 0 success, 2 oracle mismatch, 3 unrecoverable fault, 4 usage error.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bench
from .dense_core import KernelConfig
from .errors import FaultToleranceError, OracleMismatch
from .injector import KINDS, SIDES, Injector

EXIT_OK, EXIT_ORACLE, EXIT_FAULT, EXIT_USAGE = 0, 2, 3, 4
ENV_PREFIX = "FTDENSE_"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_sizes(text: str) -> list[int]:
    """``a:b:step`` (inclusive of b) or a comma list."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1)
            if len(parts) != 3 or parts[2] < 1:
                raise ValueError
            a, b, step = parts
            sizes = list(range(a, b + 1, step))
        else:
            sizes = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}; use a:b:step or a,b,c") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return sizes


def _flag(args: list, kw: dict) -> tuple[list, dict]:
    """Default from the environment when the mirrored variable is set."""
    name = args[0].lstrip("-").replace("-", "_").upper()
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None:
        return args, kw
    action = kw.get("action")
    if action == "store_true":
        kw["default"] = raw.strip().lower() in ("1", "true", "yes", "on")
    else:
        conv = kw.get("type", str)
        try:
            kw["default"] = conv(raw)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{ENV_PREFIX + name}={raw!r}: {exc}") from None
        if "choices" in kw and kw["default"] not in kw["choices"]:
            raise UsageError(f"{ENV_PREFIX + name}={raw!r}: choose from {kw['choices']}")
    return args, kw


def _common(p: argparse.ArgumentParser, default_sizes: str) -> None:
    def add(*args, **kw):
        args, kw = _flag(list(args), kw)
        p.add_argument(*args, **kw)

    add("--routine", choices=bench.ROUTINES, default="gemm")
    add("--sizes", type=parse_sizes, default=parse_sizes(default_sizes), help="a:b:step or a comma list")
    add("--reps", type=int, default=20)
    add("--ft", action="store_true", help="run the protected variant")
    add("--threads", type=int, default=1)
    add("--inject-count", type=int, default=0)
    add("--inject-interval", type=int, default=0, help="0 spreads the errors evenly")
    add("--kind", choices=KINDS, default="additive")
    add("--side", choices=SIDES, default=None, help="default: DMR primary for Level 1/2, C entry for Level 3")
    add("--seed", type=int, default=0)
    add("--lane-width", type=int, choices=(4, 8), default=8)
    add("--detect-only", action="store_true")
    add("--csv", default=None, metavar="PATH")
    add("--log", default=None, metavar="PATH", help="write the injection log here")
    for name in ("mc", "kc", "nc", "mr", "nr"):
        add(f"--{name}", type=int, default=None)
    add("--c-tol", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ftdense", description="Benchmark, fault-inject and verify the ftdense kernels.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("bench", help="time a size sweep (GFLOPS, overhead)"), "256:1024:256")
    _common(sub.add_parser("inject", help="run an injection campaign and check the result"), "512")
    _common(sub.add_parser("verify", help="compare against the reference oracles"), "1,7,64,300")
    return p


def config_from(ns) -> KernelConfig:
    kw = {k: getattr(ns, k) for k in ("mc", "kc", "nc", "mr", "nr") if getattr(ns, k) is not None}
    if ns.c_tol is not None:
        kw["c_tol"] = ns.c_tol
    if ns.detect_only:
        kw["detect_only"] = True
    if ns.lane_width == 4:
        return KernelConfig.avx2(**kw)
    return KernelConfig(**kw)


def _plan_kw(ns) -> dict:
    kw = {"kind": ns.kind}
    if ns.side is not None:
        kw["side"] = ns.side
    return kw


def _print_records(records, out) -> None:
    cols = ("routine", "m", "n", "k", "threads", "ft", "injected", "corrected", "median_time", "mean_gflops",
            "std_gflops", "overhead", "correct")
    print("  ".join(cols), file=out)
    for r in records:
        vals = []
        for c in cols:
            v = getattr(r, c)
            vals.append(f"{v:.4g}" if isinstance(v, float) else str(v))
        print("  ".join(vals), file=out)


def cmd_bench(ns, cfg, out) -> int:
    plan = None
    if ns.inject_count > 0 and not ns.ft:
        raise UsageError("--inject-count needs --ft")
    if ns.inject_count > 0 and (ns.kind != "additive" or ns.side is not None):
        plan = bench.plan_for(ns.routine, min(ns.sizes), cfg, ns.inject_count, ns.inject_interval, ns.seed,
                              **_plan_kw(ns))
    spec = bench.BenchSpec(ns.routine, ns.sizes, ns.reps, ns.ft, plan, ns.threads, cfg, ns.csv, ns.seed,
                           inject_count=ns.inject_count, inject_interval=ns.inject_interval)
    _print_records(bench.run(spec), out)
    return EXIT_OK


def cmd_inject(ns, cfg, out) -> int:
    size = ns.sizes[0]
    count = ns.inject_count or 20
    plan = bench.plan_for(ns.routine, size, cfg, count, ns.inject_interval, ns.seed, **_plan_kw(ns))
    inputs = bench.make_inputs(ns.routine, size, np.random.default_rng(ns.seed))
    clean, _ = bench.call(ns.routine, bench._fresh(ns.routine, inputs), cfg, ft=True, threads=ns.threads)
    inj = Injector(plan)
    try:
        result, report = bench.call(ns.routine, bench._fresh(ns.routine, inputs), cfg, ft=True,
                                    threads=ns.threads, injector=inj)
    finally:
        if ns.log:
            with open(ns.log, "w") as fh:
                fh.write(inj.log.dumps())
    print(f"plan: {plan}", file=out)
    print(f"injected={len(inj.log)} detected={report.errors_detected} corrected={report.errors_corrected} "
          f"intervals={report.intervals_verified}", file=out)
    same = np.array_equal(np.asarray(result), np.asarray(clean))
    ratio = bench.oracle_ratio(ns.routine, inputs, result)
    print(f"bitwise equal to fault-free run: {same}; oracle error/bound: {ratio:.3g}", file=out)
    if ratio > 1.0:
        raise OracleMismatch(f"{ns.routine} size {size} after injection: error is {ratio:.3g}x the bound")
    return EXIT_OK


def cmd_verify(ns, cfg, out) -> int:
    rng = np.random.default_rng(ns.seed)
    worst = 0.0
    for size in ns.sizes:
        inputs = bench.make_inputs(ns.routine, size, rng)
        result, _ = bench.call(ns.routine, bench._fresh(ns.routine, inputs), cfg, ft=ns.ft, threads=ns.threads)
        ratio = bench.oracle_ratio(ns.routine, inputs, result)
        worst = max(worst, ratio)
        print(f"{ns.routine} size={size} ft={ns.ft} error/bound={ratio:.3g} {'ok' if ratio <= 1 else 'FAIL'}",
              file=out)
    if worst > 1.0:
        raise OracleMismatch(f"{ns.routine}: worst error is {worst:.3g}x the bound")
    return EXIT_OK


COMMANDS = {"bench": cmd_bench, "inject": cmd_inject, "verify": cmd_verify}


def main(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    try:
        ns = build_parser().parse_args(argv)
        if ns.reps < 1 or ns.threads < 1 or ns.inject_count < 0 or ns.inject_interval < 0:
            raise UsageError("--reps and --threads must be >= 1; injection settings must be >= 0")
        cfg = config_from(ns)
        return COMMANDS[ns.command](ns, cfg, out)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, ValueError) as exc:
        print(f"ftdense: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OracleMismatch as exc:
        print(f"ftdense: oracle mismatch: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except FaultToleranceError as exc:
        print(f"ftdense: {type(exc).__name__}: {exc}", file=sys.stderr)
        if exc.report is not None:
            print(f"ftdense: partial report: {exc.report.as_dict()}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
