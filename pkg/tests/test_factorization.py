"""Factorization tests: every expected value is either computed by hand
(2x2 determinants, eliminations) or checked by re-multiplication."""

import numpy as np
import pytest

from lsmrac.errors import NonPositiveDplus, SearchExhausted, SingularMinor
from lsmrac.factorization import (dplus_geometric, find_dplus, is_spd,
                                  ldu_factor, leading_minors, lplus,
                                  sdu_factor)

RNG = np.random.default_rng(42)

KP_THIRD_ORDER = np.array([[1.0, 2.0], [-2.0, 1.0]])


def kp_camera(phi=1.0, scale=0.5):
    return np.array([[np.cos(phi), np.sin(phi)],
                     [-scale * np.sin(phi), scale * np.cos(phi)]])


def random_nonsingular(rng, m, floor=1e-3):
    while True:
        K = rng.uniform(-1.0, 1.0, (m, m))
        if np.all(np.abs(leading_minors(K)) > floor):
            return K


class TestLeadingMinors:
    def test_identity(self):
        np.testing.assert_allclose(leading_minors(np.eye(2)), [1.0, 1.0])

    def test_hand_2x2(self):
        np.testing.assert_allclose(leading_minors(KP_THIRD_ORDER), [1.0, 5.0],
                                   rtol=1e-12)

    def test_camera_gain(self):
        # det = scale * (cos^2 + sin^2) = scale
        np.testing.assert_allclose(leading_minors(kp_camera()),
                                   [np.cos(1.0), 0.5], rtol=1e-12)

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            leading_minors(np.ones((2, 3)))


class TestLduFactor:
    def test_identity(self):
        r = ldu_factor(np.eye(3))
        for M in (r.Lp, r.Dp, r.Up):
            np.testing.assert_array_equal(M, np.eye(3))

    def test_hand_elimination(self):
        r = ldu_factor(KP_THIRD_ORDER)
        np.testing.assert_allclose(r.Lp, [[1, 0], [-2, 1]], atol=1e-14)
        np.testing.assert_allclose(r.Dp, np.diag([1.0, 5.0]), atol=1e-14)
        np.testing.assert_allclose(r.Up, [[1, 2], [0, 1]], atol=1e-14)

    def test_singular_first_minor(self):
        with pytest.raises(SingularMinor) as exc:
            ldu_factor(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert exc.value.index == 1

    def test_scale_invariant_tolerance(self):
        # uniformly tiny but well conditioned must still factor
        r = ldu_factor(1e-8 * KP_THIRD_ORDER)
        recon = r.Lp @ r.Dp @ r.Up
        np.testing.assert_allclose(recon, 1e-8 * KP_THIRD_ORDER, rtol=1e-12)

    def test_reconstruction_random(self):
        for _ in range(200):
            m = int(RNG.integers(2, 5))
            K = random_nonsingular(RNG, m)
            r = ldu_factor(K)
            err = np.abs(r.Lp @ r.Dp @ r.Up - K).max()
            assert err <= 1e-10 * np.abs(K).max()
            # diagonal pattern matches minor ratios
            minors = r.minors
            ratios = minors / np.concatenate(([1.0], minors[:-1]))
            np.testing.assert_allclose(np.diag(r.Dp), ratios, rtol=1e-8)


class TestDplusGeometric:
    def test_unit(self):
        np.testing.assert_array_equal(dplus_geometric(1.0, 3), np.eye(3))

    def test_powers(self):
        np.testing.assert_allclose(dplus_geometric(2.0, 3),
                                   np.diag([1.0, 4.0, 16.0]))
        np.testing.assert_allclose(dplus_geometric(10.0, 2),
                                   np.diag([1.0, 100.0]))

    def test_rejects_nonpositive(self):
        with pytest.raises(NonPositiveDplus):
            dplus_geometric(0.0, 2)


class TestLplus:
    def test_identity_fixed_point(self):
        np.testing.assert_array_equal(lplus(np.eye(2), 3.0), np.eye(2))

    def test_hand_scaling(self):
        L = lplus(np.array([[1.0, 0.0], [-2.0, 1.0]]), 4.0)
        np.testing.assert_allclose(L, [[1.0, 0.0], [-0.5, 1.0]])

    def test_off_diagonal_bound(self):
        for _ in range(50):
            m = int(RNG.integers(2, 6))
            Lp = np.tril(RNG.uniform(-5, 5, (m, m)), -1) + np.eye(m)
            for d in (1.0, 2.0, 16.0, 1e6):
                L1 = lplus(Lp, d)
                off = np.abs(L1 - np.eye(m)).max()
                assert off <= np.abs(Lp).max() / d + 1e-15
                np.testing.assert_array_equal(np.diag(L1), np.ones(m))


class TestSduFactor:
    def test_identity(self):
        r = sdu_factor(np.eye(2), np.eye(2))
        for M in (r.S, r.D, r.U):
            np.testing.assert_array_equal(M, np.eye(2))

    def test_hand_case(self):
        dp = np.abs(np.diag(ldu_factor(KP_THIRD_ORDER).Dp))
        r = sdu_factor(KP_THIRD_ORDER, dp)
        np.testing.assert_allclose(r.D, np.eye(2), atol=1e-14)
        np.testing.assert_allclose(r.S, [[1.0, -2.0], [-2.0, 9.0]],
                                   atol=1e-12)
        np.testing.assert_allclose(r.S @ r.U, KP_THIRD_ORDER, atol=1e-12)

    def test_structural_shape(self):
        K = random_nonsingular(RNG, 4)
        r = sdu_factor(K, dplus_geometric(2.0, 4))
        # D exactly diagonal, U exactly unit upper: zeros, not small numbers
        assert np.all(r.D[~np.eye(4, dtype=bool)] == 0.0)
        assert np.all(np.tril(r.U, -1) == 0.0)
        np.testing.assert_array_equal(np.diag(r.U), np.ones(4))
        np.testing.assert_array_equal(r.S, r.S.T)
        assert is_spd(r.S)

    def test_reconstruction_random(self):
        for _ in range(200):
            m = int(RNG.integers(2, 5))
            K = random_nonsingular(RNG, m)
            dplus = np.exp(RNG.uniform(-1, 3, m))
            r = sdu_factor(K, dplus)
            err = np.abs(r.S @ r.D @ r.U - K).max()
            assert err <= 1e-10 * np.abs(K).max()

    def test_sign_invariance_across_dplus(self):
        for _ in range(10):
            m = int(RNG.integers(2, 5))
            K = random_nonsingular(RNG, m)
            ref = sdu_factor(K, np.abs(np.diag(ldu_factor(K).Dp))).sign_d
            for _ in range(10):
                r = sdu_factor(K, np.exp(RNG.uniform(-2, 2, m)))
                np.testing.assert_array_equal(r.sign_d, ref)

    def test_rejects_bad_dplus(self):
        with pytest.raises(NonPositiveDplus):
            sdu_factor(KP_THIRD_ORDER, np.array([1.0, -1.0]))

    def test_propagates_singular(self):
        with pytest.raises(SingularMinor):
            sdu_factor(np.array([[0.0, 1.0], [1.0, 0.0]]), np.ones(2))


class TestFindDplus:
    def test_identity_gain(self):
        d, Q = find_dplus(np.eye(2), -2.0 * np.eye(2))
        assert d == 1.0
        np.testing.assert_allclose(Q, 2.0 * np.eye(2), atol=1e-12)

    def test_third_order_gain(self):
        d, Q = find_dplus(KP_THIRD_ORDER, -2.0 * np.eye(2))
        assert is_spd(Q)
        r = sdu_factor(KP_THIRD_ORDER, dplus_geometric(d, 2))
        np.testing.assert_allclose(r.S @ r.D @ r.U, KP_THIRD_ORDER,
                                   atol=1e-10)

    def test_diagonal_mixed_signs(self):
        d, Q = find_dplus(np.diag([2.0, -3.0]), -np.eye(2))
        assert d == 1.0
        assert is_spd(Q)

    def test_monotone_persistence(self):
        # once certified, doubling the scaling keeps the certificate valid
        for _ in range(20):
            m = int(RNG.integers(2, 5))
            K = random_nonsingular(RNG, m)
            Am = -np.diag(RNG.uniform(0.5, 3.0, m))
            d, _ = find_dplus(K, Am)
            for factor in (2.0, 4.0):
                L1 = lplus(ldu_factor(K).Lp, factor * d)
                G = L1 @ L1.T
                assert is_spd(-(G @ Am + Am @ G))

    def test_rejects_bad_model_matrix(self):
        with pytest.raises(ValueError):
            find_dplus(np.eye(2), np.eye(2))
        with pytest.raises(ValueError):
            find_dplus(np.eye(2), np.array([[-1.0, 0.5], [0.0, -1.0]]))

    def test_search_exhausted(self):
        with pytest.raises(SearchExhausted):
            find_dplus(KP_THIRD_ORDER, -np.diag([2.0, 1.0]), cap=0.5)


class TestIsSpd:
    def test_identity(self):
        assert is_spd(np.eye(3))

    def test_indefinite_diagonal(self):
        assert not is_spd(np.diag([1.0, -1.0]))

    def test_hand_spd(self):
        # eigenvalues 1 and 3
        assert is_spd(np.array([[2.0, 1.0], [1.0, 2.0]]))

    def test_asymmetric(self):
        assert not is_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_zero_matrix(self):
        assert not is_spd(np.zeros((2, 2)))
