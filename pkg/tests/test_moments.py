"""Isserlis pairings, vech indexing, exact/MC lifted moments, AR(1) warm start."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import lsagap as L
from lsagap.moments import (Ar1WarmStart, GuardExceededError, PairingSet,
                            VechIndexer, ar1_warm_start, ar1_warm_start_oracle,
                            exact_lifted_moments, exact_lifted_moments_naive,
                            isserlis, lift_coefficients, lifted_moments_to_csv,
                            mc_lifted_moments, perfect_matchings,
                            population_limit_moments)


class TestPairings:
    def test_matching_counts(self):
        assert len(perfect_matchings(2)) == 1
        assert len(perfect_matchings(4)) == 3
        assert len(perfect_matchings(6)) == 15
        assert perfect_matchings(3) == []

    def test_pairing_set(self):
        ps = PairingSet.of(6)
        assert ps.count == 6 and len(ps.matchings) == 15


class TestIsserlis:
    def test_second_moment(self):
        cov = np.array([[2.5]])
        assert isserlis(cov, [0, 0]) == pytest.approx(2.5)

    def test_fourth_moment(self):
        cov = np.array([[1.7]])
        assert isserlis(cov, [0, 0, 0, 0]) == pytest.approx(3 * 1.7**2)

    def test_odd_vanishes(self):
        assert isserlis(np.eye(2), [0, 1, 1]) == 0.0

    def test_three_variable_sixth_moment(self):
        # E[X^2 Y^2 Z^2] for jointly Gaussian (X, Y, Z) with common variance
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 3))
        cov = a @ a.T
        g0x, g0y, g0z = cov[0, 0], cov[1, 1], cov[2, 2]
        gxy, gxz, gyz = cov[0, 1], cov[0, 2], cov[1, 2]
        expected = (g0x * g0y * g0z + g0z * 2 * gxy**2 + g0y * 2 * gxz**2
                    + g0x * 2 * gyz**2 + 8 * gxy * gxz * gyz)
        assert isserlis(cov, [0, 0, 1, 1, 2, 2]) == pytest.approx(expected, rel=1e-12)

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            isserlis(np.eye(2), [0, 3])

    def test_factor_guard(self):
        with pytest.raises(ValueError):
            isserlis(np.eye(2), [0] * 10)


class TestVechIndexer:
    def test_pairs_column_major_lower(self):
        vix = VechIndexer(3)
        assert vix.pairs == ((0, 0), (1, 0), (2, 0), (1, 1), (2, 1), (2, 2))
        assert vix.size == 6

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 10**6))
    def test_round_trip_and_duplication(self, d, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((d, d))
        m = a + a.T
        vix = VechIndexer(d)
        v = vix.vech(m)
        assert np.array_equal(vix.unvech(v), m)
        # vec(M) = D vech(M), column-major vec
        assert np.allclose(vix.duplication() @ v, m.T.ravel(), atol=1e-15)


class TestExactLiftedMoments:
    def test_matches_naive_double_sum(self):
        # brute-force equivalence on every small instance
        cases = [([0.9], 4), ([0.9], 12), ([0.5, 0.3], 7), ([0.5, 0.3], 12),
                 ([-0.4, 0.2], 9)]
        for rho, n in cases:
            proc = L.ArProcess(rho, 0.8)
            fast = exact_lifted_moments(proc, n)
            slow = exact_lifted_moments_naive(proc, n)
            assert np.allclose(fast.s_tilde, slow.s_tilde, atol=1e-12 * fast.s_tilde.max())
            assert np.allclose(fast.r_tilde, slow.r_tilde, atol=1e-12 * fast.s_tilde.max())

    def test_frozen_r_entry_p1_n4(self):
        # brute-force oracle value for E[G_11 x_n^2], rho = 0.9, sigma = 1
        proc = L.ArProcess([0.9], 1.0)
        m = exact_lifted_moments(proc, 4)
        assert m.r_tilde[0, 0] == pytest.approx(48.44239612, abs=1e-6)

    def test_white_noise_structure(self):
        proc = L.ArProcess([0.0, 0.0], 1.3)
        m = exact_lifted_moments(proc, 8)
        assert np.allclose(m.gamma_p, 1.69 * np.eye(2), atol=1e-14)
        # with an off-diagonal Gram entry and equal label slots, every
        # pairing hits a strictly lagged covariance, so the entry vanishes
        vix = m.indexer()
        for ell, (i, j) in enumerate(vix.pairs):
            if i != j:
                for s in range(2):
                    assert m.r_tilde[ell * 2 + s, s] == pytest.approx(0.0, abs=1e-14)

    def test_warm_start_entries_match_lift(self):
        # for p = 1 the closed forms are single entries of r and S
        proc = L.ArProcess([0.9], 1.0)
        m = exact_lifted_moments(proc, 10)
        ws = ar1_warm_start(0.9, 1.0, 10)
        ell = m.indexer().pairs.index((1, 0))
        assert m.r_tilde[ell, 0] == pytest.approx(ws.n_n, rel=1e-12)
        assert m.s_tilde[ell, ell] == pytest.approx(ws.d_n, rel=1e-12)

    def test_strictly_positive_definite(self):
        for rho, n in [([0.9], 6), ([0.9], 60), ([0.5, 0.3], 20)]:
            m = exact_lifted_moments(L.ArProcess(rho, 1.0), n)
            assert np.linalg.eigvalsh(m.s_tilde)[0] > 0

    def test_gamma_block_matches_autocovariances(self):
        proc = L.ArProcess([0.5, 0.3], 0.7)
        m = exact_lifted_moments(proc, 9)
        assert np.allclose(m.gamma_p, L.autocovariances(proc, 1).toeplitz_block(2),
                           atol=1e-12)

    def test_guards(self):
        proc = L.ArProcess([0.9], 1.0)
        with pytest.raises(GuardExceededError):
            exact_lifted_moments(proc, 600)
        with pytest.raises(ValueError):
            exact_lifted_moments(L.ArProcess([0.9], 1.0, innovation_law="uniform"), 8)

    def test_lift_coefficients_reproduce_readout(self):
        rng = np.random.default_rng(4)
        for p in (1, 2, 3):
            n = 2 * p + 5
            w = rng.standard_normal(n)
            hs = L.build_hankel(w, p)
            g = L.masked_gram(hs).g
            vix = VechIndexer(p + 1)
            z = np.kron(vix.vech(g), w[::-1][:p])
            b = rng.standard_normal(p + 1)
            a = rng.standard_normal((p + 1, p))
            assert lift_coefficients(b, a) @ z == pytest.approx(
                float(b @ g @ a @ hs.label_window), rel=1e-12)


class TestMonteCarloMoments:
    def test_agreement_with_exact_within_4_se(self):
        proc = L.ArProcess([0.9], 1.0)
        ex = exact_lifted_moments(proc, 10)
        mc = mc_lifted_moments(proc, 10, samples=150_000, seed=21)
        zs = np.abs(mc.s_tilde - ex.s_tilde) / np.where(mc.se_s > 0, mc.se_s, 1.0)
        zr = np.abs(mc.r_tilde - ex.r_tilde) / np.where(mc.se_r > 0, mc.se_r, 1.0)
        assert zs.max() < 4.0
        assert zr.max() < 4.0

    def test_error_shrinks_like_sqrt_samples(self):
        proc = L.ArProcess([0.6], 1.0)
        ex = exact_lifted_moments(proc, 8)
        small = mc_lifted_moments(proc, 8, samples=2_000, seed=3)
        large = mc_lifted_moments(proc, 8, samples=128_000, seed=4)
        err_small = np.abs(small.s_tilde - ex.s_tilde).mean()
        err_large = np.abs(large.s_tilde - ex.s_tilde).mean()
        # 64x the samples should shrink the error by about 8; allow slack
        assert err_large < err_small / 3

    def test_symmetric_by_construction(self):
        mc = mc_lifted_moments(L.ArProcess([0.5, 0.3], 1.0), 8, samples=2_000, seed=0)
        assert np.array_equal(mc.s_tilde, mc.s_tilde.T)

    def test_positive_definite_at_scale(self):
        mc = mc_lifted_moments(L.ArProcess([0.9], 1.0), 10, samples=100_000, seed=9)
        assert np.linalg.eigvalsh(mc.s_tilde)[0] > 0

    def test_non_gaussian_supported(self):
        proc = L.ArProcess([0.5], 1.0, innovation_law="laplace")
        mc = mc_lifted_moments(proc, 6, samples=5_000, seed=1)
        assert mc.mode == "monte-carlo" and mc.samples == 5_000

    def test_csv_serialization_legend(self):
        m = mc_lifted_moments(L.ArProcess([0.5], 1.0), 5, samples=500, seed=0)
        text = lifted_moments_to_csv(m)
        lines = text.splitlines()
        assert lines[0] == "block,row,col,value"
        assert lines[1].startswith("S,G(1,1)*x(1),G(1,1)*x(1),")
        assert any(row.startswith("Gamma,x(1),x(1),") for row in lines)


class TestPopulationLimit:
    def test_rank_one_structure(self):
        proc = L.ArProcess([0.7], 1.0)
        s_inf, r_inf, gp = population_limit_moments(proc)
        vals = np.linalg.eigvalsh(s_inf)
        assert vals[0] >= -1e-12
        assert np.sum(vals > 1e-10 * vals[-1]) == 1  # rank one for p = 1


class TestAr1WarmStart:
    def test_geometric_sum_example(self):
        ws = ar1_warm_start(0.5, 1.0, 3)
        # K_2 at rho = 0.5 is 0.25 + 0.0625
        from lsagap.moments import _geom_k
        assert _geom_k(0.5, 2) == pytest.approx(0.3125, rel=1e-15)

    def test_zero_rho_limits(self):
        ws = ar1_warm_start(0.0, 1.0, 12)
        assert ws.n_n == 0.0
        assert ws.alpha_star == 0.0
        assert ws.restricted_min == 0.0
        assert ws.d_n > 0

    def test_alpha_converges_to_inverse_variance(self):
        values = [ar1_warm_start(0.6, 1.0, n) for n in (10, 100, 1000)]
        scaled = [w.alpha_star * w.sigma2 for w in values]
        assert scaled[0] < scaled[1] < scaled[2] <= 1.0 + 1e-12
        assert abs(scaled[-1] - 1.0) < 0.02
        mins = [w.restricted_min for w in values]
        assert mins[0] > mins[1] > mins[2] >= 0

    def test_oracle_equality(self):
        for rho in (0.3, 0.6, 0.9):
            for n in (3, 5, 10, 50):
                ws = ar1_warm_start(rho, 1.0, n)
                n_o, d_o = ar1_warm_start_oracle(rho, 1.0, n)
                assert abs(ws.n_n - n_o) <= 1e-9 * abs(n_o)
                assert abs(ws.d_n - d_o) <= 1e-9 * abs(d_o)
                assert ws.d_n > 0

    def test_minimal_case(self):
        ws = ar1_warm_start(0.6, 1.0, 3)
        n_o, d_o = ar1_warm_start_oracle(0.6, 1.0, 3)
        assert ws.n_n == pytest.approx(n_o, rel=1e-12)
        assert ws.d_n == pytest.approx(d_o, rel=1e-12)

    def test_restricted_minimum_nonnegative(self):
        for rho in (-0.8, -0.3, 0.2, 0.7, 0.95):
            for n in (3, 7, 25):
                ws = ar1_warm_start(rho, 0.7, n)
                assert ws.restricted_min >= -1e-12

    def test_rejects_unit_root(self):
        with pytest.raises(ValueError):
            ar1_warm_start(1.0, 1.0, 5)
