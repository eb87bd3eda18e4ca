import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ftdense import bounds
from ftdense.dense_core import (DEFAULT_CONFIG, KernelConfig, oracle_dot, oracle_gemm, oracle_gemv, oracle_nrm2,
                                oracle_scal, oracle_trsv)
from ftdense.errors import DimensionError, SingularMatrixError
from ftdense.kernels import dot, gemm, gemv, nrm2, pack_a, pack_b, scal, trsm, trsv

from conftest import lower

CONFIGS = [DEFAULT_CONFIG, KernelConfig.avx2(), KernelConfig(mc=16, kc=8, nc=12, mr=4, nr=3)]


class TestScal:
    def test_epilogue_split(self, rng):
        x = rng.standard_normal(35)
        assert np.array_equal(scal(1.5, x.copy()), oracle_scal(1.5, x))

    def test_alpha_one_is_identity(self, rng):
        x = rng.standard_normal(100)
        assert np.array_equal(scal(1.0, x.copy()).view(np.int64), x.view(np.int64))

    def test_in_place(self):
        x = np.arange(5.0)
        out = scal(2.0, x)
        assert out is x and x.tolist() == [0, 2, 4, 6, 8]

    def test_large_bitwise(self, rng):
        x = rng.standard_normal(5_000_000)
        assert np.array_equal(scal(-0.75, x.copy()), oracle_scal(-0.75, x))

    def test_strided(self):
        buf = np.arange(10.0)
        scal(3.0, buf[::2])
        assert buf.tolist() == [0, 1, 6, 3, 12, 5, 18, 7, 24, 9]


class TestDotNrm2:
    def test_ones(self):
        assert dot(np.ones(64), np.ones(64)) == 64.0

    @pytest.mark.parametrize("n", [0, 1, 5, 7])
    def test_short_matches_oracle_bitwise(self, rng, n):
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        assert dot(x, y) == oracle_dot(x, y)

    def test_large_bound(self, rng):
        x, y = rng.standard_normal(10**6), rng.standard_normal(10**6)
        assert bounds.dot_ratio(dot(x, y), x, y, oracle_dot(x, y)) <= 1

    def test_nrm2_examples(self):
        assert nrm2(np.r_[3.0, 4.0, np.zeros(50)]) == 5.0
        assert nrm2(np.zeros(40)) == 0.0
        assert np.isfinite(nrm2(np.full(100, 1e200)))

    def test_nrm2_large(self, rng):
        x = rng.standard_normal(10**6)
        assert bounds.nrm2_ratio(nrm2(x), x, oracle_nrm2(x)) <= 1

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            dot(np.ones(3), np.ones(4))


class TestGemv:
    def test_identity(self, rng):
        x = rng.standard_normal(16)
        y = gemv(np.eye(16, order="F"), x, np.zeros(16))
        assert np.all(np.abs(y - x) <= np.spacing(np.abs(x)))

    @pytest.mark.parametrize("m,n", [(3, 5), (5, 3), (1, 1), (512, 512), (37, 65)])
    def test_against_oracle(self, rng, m, n):
        A = np.asfortranarray(rng.standard_normal((m, n)))
        x, y = rng.standard_normal(n), rng.standard_normal(m)
        got = gemv(A, x, y.copy(), 0.7, -1.3)
        assert bounds.gemv_ratio(got, A, x, y, 0.7, -1.3, oracle_gemv(A, x, y, 0.7, -1.3)) <= 1

    def test_beta_zero_ignores_y(self, rng):
        A = rng.standard_normal((4, 4))
        y = np.full(4, np.nan)
        assert np.isfinite(gemv(A, np.ones(4), y, 1.0, 0.0)).all()

    @pytest.mark.parametrize("m", [1, 3, 4, 9, 64])
    def test_x_load_count(self, rng, m):
        n = 13
        counters = {}
        gemv(rng.standard_normal((m, n)), rng.standard_normal(n), np.zeros(m), counters=counters)
        assert counters["x_loads"] == -(-m // 4) * n


class TestTrsv:
    def test_single_block_bitwise(self, rng):
        L, b = lower(rng, 4), rng.standard_normal(4)
        assert np.array_equal(trsv(L, b.copy()), oracle_trsv(L, b))

    def test_identity(self, rng):
        b = rng.standard_normal(64)
        assert np.array_equal(trsv(np.eye(64), b.copy()), b)

    def test_residual_1024(self, rng):
        L, b = lower(rng, 1024), rng.standard_normal(1024)
        assert bounds.trsv_ratio(L, trsv(L, b.copy()), b) <= 1

    def test_singular(self):
        with pytest.raises(SingularMatrixError):
            trsv(np.zeros((3, 3)), np.ones(3))


class TestPacking:
    def test_4x4_layout(self):
        A = np.arange(16.0).reshape(4, 4)
        p = pack_a(A, 0, 0, 4, 4, KernelConfig(mc=4, mr=4))
        # micro-panel order: for each k, the M_R rows of that column
        assert p.buffer.tolist() == A.T.ravel().tolist()
        assert np.array_equal(p.unpack(), A)

    def test_padding(self, rng):
        A = rng.standard_normal((6, 3))
        p = pack_a(A, 0, 0, 6, 3, KernelConfig(mc=8, mr=4))
        assert p.m_padded == 8 and p.buffer.size == 8 * 3
        second = p.buffer[12:].reshape(3, 4)
        assert np.all(second[:, 2:] == 0.0)
        assert np.array_equal(p.unpack(), A)

    @settings(max_examples=60, deadline=None)
    @given(m=st.integers(1, 20), k=st.integers(1, 20), n=st.integers(1, 20), mr=st.sampled_from([1, 4, 8]),
           nr=st.sampled_from([1, 4, 6]), seed=st.integers(0, 2**32 - 1))
    def test_round_trip(self, m, k, n, mr, nr, seed):
        r = np.random.default_rng(seed)
        cfg = KernelConfig(mc=8 * mr, nc=6 * nr, mr=mr, nr=nr)
        A, B = r.standard_normal((m + 3, k + 2)), r.standard_normal((k + 2, n + 1))
        assert np.array_equal(pack_a(A, 2, 1, m, k, cfg).unpack(), A[2:2 + m, 1:1 + k])
        assert np.array_equal(pack_b(B, 1, 1, k, n, cfg).unpack(), B[1:1 + k, 1:1 + n])

    def test_out_of_range(self):
        with pytest.raises(DimensionError):
            pack_a(np.ones((3, 3)), 2, 0, 2, 3)


class TestGemm:
    def test_identity(self, rng):
        B = np.asfortranarray(rng.standard_normal((256, 256)))
        C = gemm(np.eye(256, order="F"), B, np.zeros((256, 256), order="F"))
        assert np.all(np.abs(C - B) <= np.spacing(np.abs(B)))

    def test_scalar(self):
        C = gemm(np.array([[3.0]]), np.array([[4.0]]), np.array([[1.0]]), 2.0, 0.5)
        assert C[0, 0] == 2.0 * 12.0 + 0.5

    @pytest.mark.parametrize("cfg", CONFIGS, ids=["avx512", "avx2", "tiny"])
    def test_blocking_edges(self, rng, cfg):
        m, n, k = 300, 300, 300
        A, B = rng.standard_normal((m, k)), rng.standard_normal((k, n))
        C0 = rng.standard_normal((m, n))
        got = gemm(A, B, C0.copy(order="F"), -0.5, 2.0, cfg)
        assert bounds.gemm_ratio(got, A, B, C0, -0.5, 2.0, oracle_gemm(A, B, C0, -0.5, 2.0)) <= 1

    def test_row_major_input(self, rng):
        A, B, C = rng.standard_normal((9, 7)), rng.standard_normal((7, 5)), np.zeros((9, 5))
        gemm(A, B, C)
        assert bounds.gemm_ratio(C, A, B, np.zeros((9, 5)), 1, 0, oracle_gemm(A, B, np.zeros((9, 5)))) <= 1

    def test_tile_count(self, rng):
        cfg = KernelConfig(mc=16, kc=8, nc=12, mr=4, nr=3)
        counters = {}
        gemm(rng.standard_normal((10, 20)), rng.standard_normal((20, 7)), np.zeros((10, 7)), cfg=cfg,
             counters=counters)
        assert counters["micro_tiles"] == 3 * 3 * 3  # ceil(20/8) k-slices x ceil(10/4) x ceil(7/3)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            gemm(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 3)))


class TestTrsm:
    def test_identity(self, rng):
        B = rng.standard_normal((20, 3))
        assert np.array_equal(trsm(np.eye(20), B.copy(order="F")), B)

    def test_diagonal_two(self, rng):
        B = rng.standard_normal((50, 7))
        assert np.array_equal(trsm(2 * np.eye(50), B.copy(order="F")), B / 2)

    @pytest.mark.parametrize("cfg", CONFIGS, ids=["avx512", "avx2", "tiny"])
    def test_residual(self, rng, cfg):
        L, B = lower(rng, 384), rng.standard_normal((384, 256))
        assert bounds.trsm_ratio(L, trsm(L, B.copy(order="F"), cfg), B) <= 1
