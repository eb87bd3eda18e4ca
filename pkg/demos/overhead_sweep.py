"""Protection overhead of fused ABFT GEMM and DMR scal across sizes.

Run: python3 demos/overhead_sweep.py [max_n]
"""
import sys
import time

import numpy as np

from ftdense import abft, dmr, kernels
from ftdense.bench import measure_gemv_gflops
from ftdense.dense_core import DEFAULT_CONFIG


def interleaved(fns, reps):
    times = [[] for _ in fns]
    for f in fns:
        f()
    for _ in range(reps):
        for i, f in enumerate(fns):
            t0 = time.perf_counter()
            f()
            times[i].append(time.perf_counter() - t0)
    return [float(np.median(t)) for t in times]


top = int(sys.argv[1]) if len(sys.argv) > 1 else 1024
rng = np.random.default_rng(0)
print(f"{'n':>6} {'GFLOPS':>8} {'fused':>8} {'unfused':>8} {'model':>8}")
for n in range(256, top + 1, 256):
    A, B = np.asfortranarray(rng.standard_normal((n, n))), np.asfortranarray(rng.standard_normal((n, n)))
    C = np.zeros((n, n), order="F")
    plain, fused, unfused = interleaved([
        lambda: kernels.gemm(A, B, C),
        lambda: abft.ft_gemm(A, B, C),
        lambda: abft.ft_gemm(A, B, C, fused=False),
    ], reps=3)
    p_mm = 2 * n**3 / plain / 1e9
    model = abft.estimate_abft_overhead(n, n, DEFAULT_CONFIG.kc, p_mm, measure_gemv_gflops(n))
    print(f"{n:>6} {p_mm:>8.2f} {fused / plain - 1:>8.1%} {unfused / plain - 1:>8.1%} {model:>8.1%}")

print()
for n in (10**5, 10**6, 5 * 10**6):
    a, f = rng.standard_normal(n), rng.standard_normal(n)
    ratios = []
    for _ in range(21):
        t0 = time.perf_counter()
        kernels.scal(-1.0, a)
        t1 = time.perf_counter()
        dmr.ft_scal(-1.0, f)
        ratios.append((time.perf_counter() - t1) / (t1 - t0))
    print(f"ft_scal n={n:>8}: overhead {np.median(ratios) - 1:+.1%}")
