import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ftdense import kernels
from ftdense.dense_core import DEFAULT_CONFIG, KernelConfig
from ftdense.dmr import (Checkpoint, CompareMask, FtReport, compare_blocks, count_intervals, dmr_interval, ft_dot,
                         ft_gemv, ft_nrm2, ft_scal, ft_trsv, recover_interval, reduce_masks)
from ftdense.errors import DetectedButUncorrected, Unrecoverable
from ftdense.injector import FaultPlan, Injector

from conftest import lower


def bits(a):
    return np.asarray(a, dtype=np.float64).view(np.int64)


class TestMasks:
    def test_clean_interval(self, rng):
        x = rng.standard_normal(32)
        out, mask = dmr_interval(lambda v: 2 * v, lambda v: 2 * v, x)
        assert mask.ok and np.array_equal(bits(out), bits(2 * x))

    def test_flip_in_block_two_of_four(self, rng):
        p = rng.standard_normal(32)
        s = p.copy()
        s[2 * 8 + 5] = np.nextafter(s[2 * 8 + 5], np.inf)
        masks = compare_blocks(p, s, 8)
        assert [m.ok for m in masks] == [True, True, False, True]
        red = reduce_masks(masks)
        assert not red.ok and red.lanes.tolist().count(False) == 1

    def test_negative_zero_is_a_mismatch(self):
        assert not reduce_masks(compare_blocks([0.0], [-0.0], 8)).ok

    def test_injected_primary_is_caught(self, rng):
        inj = Injector(FaultPlan("scal", count=1, interval_k=1))
        x = rng.standard_normal(32)
        _, mask = dmr_interval(lambda v: 3 * v, lambda v: 3 * v, x, injector=inj, iteration=0)
        assert not mask.ok and len(inj.log) == 1

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.booleans(), min_size=8, max_size=8), min_size=1, max_size=6))
    def test_and_reduction_is_monotone(self, lanes):
        masks = [CompareMask(np.array(m)) for m in lanes]
        red = reduce_masks(masks)
        assert red.lanes.tolist() == np.logical_and.reduce([np.array(m) for m in lanes]).tolist()
        # adding a mask can only clear lanes
        more = reduce_masks(masks + [CompareMask(np.array([True] * 7 + [False]))])
        assert np.all(more.lanes <= red.lanes)


class TestRecover:
    def test_transient_fault_recovered(self, rng):
        x = rng.standard_normal(32)
        inj = Injector(FaultPlan("scal", count=1, interval_k=1))
        chk = Checkpoint(x.copy(), 0)
        out, mask = dmr_interval(np.sqrt, np.sqrt, np.abs(x), injector=inj, iteration=0)
        assert not mask.ok
        fixed = recover_interval(Checkpoint(np.abs(x), 0), np.sqrt, np.sqrt, mask=mask, outputs=out, injector=inj,
                                 iteration=0)
        assert np.array_equal(bits(fixed), bits(np.sqrt(np.abs(x))))
        assert chk.iteration == 0

    def test_sticky_is_unrecoverable(self, rng):
        inj = Injector(FaultPlan("scal", count=1, interval_k=1, kind="sticky"))
        x = rng.standard_normal(16)
        out, mask = dmr_interval(np.negative, np.negative, x, injector=inj, iteration=0)
        with pytest.raises(Unrecoverable):
            recover_interval(Checkpoint(x), np.negative, np.negative, mask=mask, outputs=out, injector=inj,
                             iteration=0)

    def test_all_true_mask_is_noop(self):
        outputs = np.arange(4.0)
        got = recover_interval(Checkpoint(np.zeros(4)), None, None, mask=CompareMask(np.ones(8, bool)),
                               outputs=outputs)
        assert got is outputs


class TestIntervalCounts:
    def test_counts(self):
        assert count_intervals("scal", 10**6) == 31250
        assert count_intervals("scal", 35) == 2
        assert count_intervals("dot", 64) == 3
        assert count_intervals("gemv", (6, 70)) == 2 * 3
        # trsv: each 4-row block is one diagonal unit plus its panel gemv
        assert count_intervals("trsv", 8) == 1 + count_intervals("gemv", (4, 4)) + 1


class TestScal:
    def test_fault_free(self, rng):
        x = rng.standard_normal(10**6)
        out, rep = ft_scal(1.5, x.copy())
        assert np.array_equal(bits(out), bits(kernels.scal(1.5, x.copy())))
        assert rep.intervals_verified == 31250 and rep.errors_detected == 0

    @pytest.mark.parametrize("kind", ["additive", "bitflip"])
    @pytest.mark.parametrize("pipelined", [False, True])
    def test_twenty_faults(self, rng, kind, pipelined):
        x = rng.standard_normal(10**5 + 3)
        clean = kernels.scal(-2.5, x.copy())
        inj = Injector(FaultPlan("scal", count=20, interval_k=150, kind=kind, seed=2))
        out, rep = ft_scal(-2.5, x.copy(), injector=inj, pipelined=pipelined)
        assert (rep.errors_detected, rep.errors_corrected) == (20, 20)
        assert np.array_equal(bits(out), bits(clean))

    def test_fault_in_epilogue(self, rng):
        x = rng.standard_normal(35)
        inj = Injector(FaultPlan("scal", count=1, interval_k=2))
        out, rep = ft_scal(2.0, x.copy(), injector=inj)
        assert inj.log.records[0].iteration == 1 and rep.errors_corrected == 1
        assert np.array_equal(out, 2.0 * x)

    def test_sticky(self, rng):
        inj = Injector(FaultPlan("scal", count=1, interval_k=5, kind="sticky"))
        with pytest.raises(Unrecoverable) as exc:
            ft_scal(2.0, rng.standard_normal(1000), injector=inj)
        assert exc.value.report.unrecoverable

    def test_detect_only(self, rng):
        inj = Injector(FaultPlan("scal", count=20, interval_k=50))
        with pytest.raises(DetectedButUncorrected) as exc:
            ft_scal(2.0, rng.standard_normal(10**5), KernelConfig.avx2(), injector=inj)
        rep = exc.value.report
        assert (rep.errors_detected, rep.errors_corrected, rep.detect_only_hits) == (20, 0, 20)

    def test_pipelined_fault_free_equal(self, rng):
        x = rng.standard_normal(1001)
        a, ra = ft_scal(0.3, x.copy())
        b, rb = ft_scal(0.3, x.copy(), pipelined=True)
        assert np.array_equal(bits(a), bits(b)) and ra.as_dict() == rb.as_dict()


class TestDotNrm2:
    def test_fault_free(self, rng):
        x, y = rng.standard_normal(12345), rng.standard_normal(12345)
        r, rep = ft_dot(x, y)
        assert r == kernels.dot(x, y) and rep.errors_detected == 0
        r, rep = ft_nrm2(x)
        assert r == kernels.nrm2(x)

    def test_ones_under_one_injection(self):
        inj = Injector(FaultPlan("dot", count=1, interval_k=1))
        r, rep = ft_dot(np.ones(64), np.ones(64), injector=inj)
        assert r == 64.0 and rep.errors_corrected == 1

    @pytest.mark.parametrize("routine", ["dot", "nrm2"])
    def test_twenty_faults(self, rng, routine):
        x, y = rng.standard_normal(10**6), rng.standard_normal(10**6)
        inj = Injector(FaultPlan(routine, count=20, interval_k=1500, kind="bitflip", seed=9))
        if routine == "dot":
            r, rep = ft_dot(x, y, injector=inj)
            clean = kernels.dot(x, y)
        else:
            r, rep = ft_nrm2(x, injector=inj)
            clean = kernels.nrm2(x)
        assert (rep.errors_detected, rep.errors_corrected) == (20, 20)
        assert r == clean

    def test_fault_in_final_reduction(self, rng):
        x = rng.standard_normal(100)
        last = count_intervals("dot", 100) - 1
        inj = Injector(FaultPlan("dot", count=1, interval_k=last + 1))
        r, rep = ft_dot(x, x, injector=inj)
        assert inj.log.records[0].iteration == last and rep.errors_corrected == 1
        assert r == kernels.dot(x, x)


class TestGemv:
    def test_fault_free(self, rng):
        A = np.asfortranarray(rng.standard_normal((512, 512)))
        x, y = rng.standard_normal(512), rng.standard_normal(512)
        out, rep = ft_gemv(A, x, y.copy(), 1.5, 0.5)
        assert np.array_equal(bits(out), bits(kernels.gemv(A, x, y.copy(), 1.5, 0.5)))
        assert rep.intervals_verified == count_intervals("gemv", (512, 512))

    def test_twenty_faults(self, rng):
        A = np.asfortranarray(rng.standard_normal((512, 512)))
        x, y = rng.standard_normal(512), rng.standard_normal(512)
        clean = kernels.gemv(A, x, y.copy(), 1.0, 1.0)
        k = count_intervals("gemv", (512, 512)) // 20
        inj = Injector(FaultPlan("gemv", count=20, interval_k=k, seed=3))
        out, rep = ft_gemv(A, x, y.copy(), 1.0, 1.0, injector=inj)
        assert (rep.errors_detected, rep.errors_corrected) == (20, 20)
        assert np.array_equal(bits(out), bits(clean))

    @pytest.mark.parametrize("which", ["first", "last"])
    def test_fault_in_row_epilogue(self, rng, which):
        m, n = 7, 40  # the second sweep covers rows 4..6 only
        A, x = rng.standard_normal((m, n)), rng.standard_normal(n)
        per_sweep = n // DEFAULT_CONFIG.interval + 1
        it = per_sweep if which == "first" else 2 * per_sweep - 1
        inj = Injector(FaultPlan("gemv", count=1, interval_k=it + 1))
        out, rep = ft_gemv(A, x, np.zeros(m), injector=inj)
        assert inj.log.records[0].iteration == it and rep.errors_corrected == 1
        assert inj.log.records[0].site[0] >= 4 or which == "last"
        assert np.array_equal(out, kernels.gemv(A, x, np.zeros(m)))


class TestTrsv:
    def test_fault_free(self, rng):
        L, b = lower(rng, 300), rng.standard_normal(300)
        out, rep = ft_trsv(L, b.copy())
        assert np.array_equal(bits(out), bits(kernels.trsv(L, b.copy())))
        assert rep.intervals_verified == count_intervals("trsv", 300)

    def test_fault_in_diagonal_block(self, rng):
        L, b = lower(rng, 64), rng.standard_normal(64)
        inj = Injector(FaultPlan("trsv", count=1, interval_k=1))  # iteration 0 is the first diagonal block
        out, rep = ft_trsv(L, b.copy(), injector=inj)
        assert rep.errors_corrected == 1
        assert np.array_equal(bits(out), bits(kernels.trsv(L, b.copy())))

    def test_fault_in_panel(self, rng):
        L, b = lower(rng, 64), rng.standard_normal(64)
        inj = Injector(FaultPlan("trsv", count=1, interval_k=3))
        out, rep = ft_trsv(L, b.copy(), injector=inj)
        assert rep.errors_corrected == 1
        assert np.array_equal(bits(out), bits(kernels.trsv(L, b.copy())))

    def test_twenty_faults(self, rng):
        L, b = lower(rng, 512), rng.standard_normal(512)
        k = count_intervals("trsv", 512) // 20
        inj = Injector(FaultPlan("trsv", count=20, interval_k=k, kind="bitflip", seed=5))
        out, rep = ft_trsv(L, b.copy(), injector=inj)
        assert (rep.errors_detected, rep.errors_corrected) == (20, 20)
        assert np.array_equal(bits(out), bits(kernels.trsv(L, b.copy())))


def test_report_addition():
    a = FtReport(3, 1, 1)
    b = FtReport(2, 2, 1, detect_only_hits=1)
    s = a + b
    assert (s.intervals_verified, s.errors_detected, s.errors_corrected, s.detect_only_hits, s.threads) == \
        (5, 3, 2, 1, 2)
