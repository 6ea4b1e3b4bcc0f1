"""Hankel layout, masked Gram, cubic coordinates and their collapse."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import lsagap as L
from lsagap.hankel import cubic_features, feature_collapse_error, iter_cubic_features

finite_floats = st.floats(min_value=-50, max_value=50, allow_nan=False)


class TestLayout:
    def test_p1_n3(self):
        hs = L.build_hankel([1.0, 2.0, 3.0], 1)
        assert np.array_equal(hs.h, [[1, 2, 3], [2, 3, 0]])

    def test_p2_n4(self):
        hs = L.build_hankel([1.0, 2.0, 3.0, 4.0], 2)
        assert np.array_equal(hs.h, [[1, 2, 3], [2, 3, 4], [3, 4, 0]])

    def test_zero_window(self):
        hs = L.build_hankel(np.zeros(7), 3)
        assert not hs.h.any()

    def test_window_too_short(self):
        with pytest.raises(ValueError):
            L.build_hankel([1.0, 2.0], 2)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(finite_floats, min_size=4, max_size=12), st.integers(1, 3))
    def test_antidiagonal_consistency(self, window, p):
        if len(window) < p + 1:
            window = window + [0.0] * (p + 1 - len(window))
        hs = L.build_hankel(window, p)
        rows, cols = hs.h.shape
        for i in range(1, rows):
            for j in range(cols - 1):
                if i == rows - 1 and j + 1 == cols - 1:
                    continue  # label slot
                if (i - 1, j + 1) == (rows - 1, cols - 1):
                    continue
                assert hs.h[i, j] == hs.h[i - 1, j + 1]


class TestMaskedGram:
    def test_explicit_expansion_p1_n3(self):
        x1, x2, x3 = 1.5, -0.7, 2.2
        g = L.masked_gram(L.build_hankel([x1, x2, x3], 1)).g
        expected = np.array([[x1**2 + x2**2, x1 * x2 + x2 * x3],
                             [x1 * x2 + x2 * x3, x2**2 + x3**2]]) / 3.0
        assert np.allclose(g, expected, atol=1e-15)

    def test_zero_window(self):
        g = L.masked_gram(L.build_hankel(np.zeros(5), 2)).g
        assert not g.any()

    @settings(max_examples=40, deadline=None)
    @given(st.lists(finite_floats, min_size=5, max_size=14), st.integers(1, 3))
    def test_column_sum_second_path(self, window, p):
        # independent formulation: (1/n) sum of window outer products
        if len(window) < p + 2:
            window = window + [1.0] * (p + 2 - len(window))
        x = np.asarray(window)
        n = x.shape[0]
        g = L.masked_gram(L.build_hankel(x, p)).g
        ref = np.zeros((p + 1, p + 1))
        for i in range(n - p):
            w = x[i: i + p + 1]
            ref += np.outer(w, w)
        assert np.allclose(g, ref / n, atol=1e-12 * max(1.0, np.abs(ref).max()))

    def test_psd_on_random_windows(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            p = int(rng.integers(1, 4))
            n = int(rng.integers(p + 1, p + 12))
            g = L.masked_gram(L.build_hankel(rng.standard_normal(n), p)).g
            assert np.linalg.eigvalsh(g)[0] >= -1e-12


class TestCubicFeatures:
    def test_readout_expansion_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            p, n = 2, 10
            w = rng.standard_normal(n)
            b = rng.standard_normal(p + 1)
            a = rng.standard_normal((p + 1, p))
            phi = cubic_features(w, p)
            expansion = np.einsum("j,jrk->rk", b, phi)
            expansion = np.einsum("rk,rk->", expansion, a)
            hs = L.build_hankel(w, p)
            direct = float(b @ L.masked_gram(hs).g @ a @ hs.label_window)
            assert direct == pytest.approx(expansion, abs=1e-12 * max(1, abs(direct)))

    def test_zero_window_all_zero(self):
        assert not cubic_features(np.zeros(9), 2).any()

    def test_symmetry_in_first_two_indices(self):
        rng = np.random.default_rng(1)
        phi = cubic_features(rng.standard_normal(12), 3)
        assert np.allclose(phi, np.swapaxes(phi, 0, 1), atol=1e-15)

    def test_feature_count(self):
        p = 3
        feats = list(iter_cubic_features(np.arange(1.0, 11.0), p))
        assert len(feats) == p * (p + 1) ** 2
        assert feats[0].j == 1 and feats[0].r == 1 and feats[0].k == 1


class TestCollapse:
    def test_white_noise_off_diagonal_target_zero(self):
        # for gamma_k = 0 (k >= 1) the j != r coordinates collapse to zero;
        # their L2 size at large n is small
        proc = L.ArProcess([0.0], 1.0)
        err = feature_collapse_error(proc, 4000, 1, seed=0, samples=100)
        assert err < 0.2

    def test_error_shrinks_with_n(self):
        proc = L.ArProcess([0.9], 1.0)
        small = np.mean([feature_collapse_error(proc, 100, 1, seed=s, samples=120)
                         for s in range(20)])
        large = np.mean([feature_collapse_error(proc, 2000, 1, seed=100 + s, samples=120)
                         for s in range(20)])
        assert large < small

    def test_magnitude_at_large_n(self):
        # frozen Monte Carlo magnitude (seed 0, 200 windows)
        proc = L.ArProcess([0.9], 1.0)
        err = feature_collapse_error(proc, 10_000, 1, seed=0, samples=200)
        assert err == pytest.approx(0.52, abs=0.3)

    def test_gram_converges_to_toeplitz(self):
        proc = L.ArProcess([0.5, 0.3], 1.0)
        target = L.autocovariances(proc, 2).toeplitz_block(3)
        devs = []
        for n in (50, 400, 3200):
            wins = L.sample_windows(proc, n, 60, seed=n)
            d = [np.abs(L.masked_gram(L.build_hankel(w, 2)).g - target).max()
                 for w in wins]
            devs.append(np.mean(d))
        assert devs[0] > devs[1] > devs[2]
