import numpy as np
import pytest

from ftdense import abft, kernels
from ftdense.dense_core import DEFAULT_CONFIG, KernelConfig
from ftdense.errors import MultipleErrors
from ftdense.injector import FaultPlan, Injector, arm
from ftdense.parallel import ThreadPlan, par_dot, par_ft_gemm, par_gemm, par_gemv, par_nrm2

SMALL = KernelConfig(mc=16, kc=32, nc=24, mr=4, nr=3)


def bits(a):
    return np.asarray(a, dtype=np.float64).view(np.int64)


def fresh(rng, m, n, k):
    return (rng.standard_normal((m, k)), rng.standard_normal((k, n)),
            np.asfortranarray(rng.standard_normal((m, n))))


class TestThreadPlan:
    def test_bands(self):
        plan = ThreadPlan.build(6, 10, 4, nr=3)
        assert [hi - lo for lo, hi in plan.m_ranges] == [2, 2, 1, 1]
        plan.validate(6, 10)

    def test_more_threads_than_rows(self):
        plan = ThreadPlan.build(2, 1, 4)
        assert [hi - lo for lo, hi in plan.m_ranges] == [1, 1, 0, 0]
        plan.validate(2, 1)

    def test_rejects(self):
        with pytest.raises(ValueError):
            ThreadPlan.build(4, 4, 0)
        with pytest.raises(AssertionError):
            ThreadPlan(2, ((0, 1), (2, 4)), ((0, 4), (4, 4))).validate(4, 4)


class TestLevel1:
    def test_t1_bitwise(self, rng):
        x, y = rng.standard_normal(10007), rng.standard_normal(10007)
        assert par_dot(x, y, t=1) == kernels.dot(x, y)
        assert par_nrm2(x, t=1) == kernels.nrm2(x)

    def test_ones_exact(self):
        x = np.ones(10**6)
        assert par_dot(x, x, t=4) == 10**6

    @pytest.mark.parametrize("t", [2, 3, 4])
    def test_bounded_by_serial(self, rng, t):
        x, y = rng.standard_normal(10**6), rng.standard_normal(10**6)
        n, u = x.size, 2.0**-53
        assert abs(par_dot(x, y, t=t) - kernels.dot(x, y)) <= 4 * n * u * np.abs(x * y).sum()
        assert abs(par_nrm2(x, t=t) - kernels.nrm2(x)) <= 4 * n * u * kernels.nrm2(x)

    def test_ft_campaign(self, rng):
        x = rng.standard_normal(10**6)
        inj = Injector(FaultPlan("dot", count=20, interval_k=1000, seed=4))
        r, rep = par_dot(x, x, t=4, ft=True, injector=inj)
        assert (rep.errors_detected, rep.errors_corrected, rep.threads) == (20, 20, 4)
        assert r == par_dot(x, x, t=4) and len(inj.log) == 20

    def test_ft_nrm2(self, rng):
        x = rng.standard_normal(50000)
        r, rep = par_nrm2(x, t=3, ft=True)
        assert r == par_nrm2(x, t=3) and rep.errors_detected == 0


class TestGemv:
    @pytest.mark.parametrize("t", [1, 4])
    def test_bitwise(self, rng, t):
        A = np.asfortranarray(rng.standard_normal((6, 50)))
        x, y = rng.standard_normal(50), rng.standard_normal(6)
        assert np.array_equal(bits(par_gemv(A, x, y.copy(), 2.0, -1.0, t=t)),
                              bits(kernels.gemv(A, x, y.copy(), 2.0, -1.0)))

    def test_campaign(self, rng):
        A = np.asfortranarray(rng.standard_normal((512, 512)))
        x = rng.standard_normal(512)
        clean = kernels.gemv(A, x, np.zeros(512))
        inj = Injector(FaultPlan("gemv", count=20, interval_k=100, seed=1))
        out, rep = par_gemv(A, x, np.zeros(512), t=4, ft=True, injector=inj)
        assert rep.errors_corrected == 20
        assert np.array_equal(bits(out), bits(clean))


class TestGemm:
    @pytest.mark.parametrize("t", [1, 2, 4])
    @pytest.mark.parametrize("cfg", [DEFAULT_CONFIG, SMALL], ids=["default", "small"])
    def test_bitwise_serial(self, rng, t, cfg):
        A, B, C = fresh(rng, 97, 131, 75)
        ref = kernels.gemm(A, B, C.copy(order="F"), 1.5, -0.5, cfg)
        assert np.array_equal(bits(par_gemm(A, B, C.copy(order="F"), 1.5, -0.5, cfg, t)), bits(ref))
        got, rep = par_ft_gemm(A, B, C.copy(order="F"), 1.5, -0.5, cfg, t)
        assert np.array_equal(bits(got), bits(ref)) and rep.corrections == []

    def test_t1_matches_serial_ft(self, rng):
        A, B, C = fresh(rng, 60, 40, 100)
        a, ra = abft.ft_gemm(A, B, C.copy(order="F"), cfg=SMALL)
        b, rb = par_ft_gemm(A, B, C.copy(order="F"), cfg=SMALL, t=1)
        assert np.array_equal(bits(a), bits(b)) and ra.intervals_verified == rb.intervals_verified

    def test_single_writer_per_entry(self, rng):
        counters = {}
        par_gemm(*fresh(rng, 13, 7, 5), t=4, counters=counters)
        assert counters["max_writers"] == 1

    def test_1024_t4(self, rng):
        A, B, C = fresh(rng, 1024, 1024, 1024)
        ref = kernels.gemm(A, B, C.copy(order="F"))
        assert np.array_equal(bits(par_gemm(A, B, C.copy(order="F"), t=4)), bits(ref))

    def test_campaign_t4(self, rng):
        A, B, C = fresh(rng, 256, 200, 640)
        clean = kernels.gemm(A, B, C.copy(order="F"), cfg=SMALL)
        inj = Injector(FaultPlan("gemm", count=20, side="abft_c_entry", seed=8))
        got, rep = par_ft_gemm(A, B, C.copy(order="F"), cfg=SMALL, t=4, injector=inj)
        assert rep.errors_corrected == 20 and rep.threads == 4
        assert sorted((c.i_err, c.j_err) for c in rep.corrections) == sorted(r.site for r in inj.log)
        assert np.abs(got - clean).max() <= 1e-9 * np.abs(clean).max()

    def test_armed_plan_is_picked_up(self, rng):
        A, B, C = fresh(rng, 64, 64, 64)
        with arm(FaultPlan("gemm", count=2, side="abft_c_entry")) as inj:
            _, rep = par_ft_gemm(A, B, C, cfg=SMALL, t=2)
        assert rep.errors_corrected == 2 and len(inj.log) == 2

    def test_two_errors_in_one_band(self, rng):
        A, B, C = fresh(rng, 64, 64, 64)
        inj = Injector(FaultPlan("gemm", count=2, burst=2, side="abft_c_entry"))
        with pytest.raises(MultipleErrors) as exc:
            par_ft_gemm(A, B, C, cfg=SMALL, t=1, injector=inj)
        assert exc.value.report is not None
