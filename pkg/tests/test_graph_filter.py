import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellnet.graph_filter import (
    apply_filter,
    check_coeffs,
    classical_coeffs,
    filtered_evaluation,
    fit_minimal_filter,
    krylov_matrix,
)
from bellnet.mdp import policy_transition, random_mdp
from bellnet.solvers import policy_evaluation_exact, policy_evaluation_iterative

from conftest import random_policy


def explicit_filter(A, h, x):
    # oracle: materialise every power of A
    return sum(hj * np.linalg.matrix_power(A, j) @ x for j, hj in enumerate(h))


class TestApplyFilter:
    def test_identity(self, rng):
        x = rng.normal(size=5)
        np.testing.assert_array_equal(apply_filter(rng.normal(size=(5, 5)), [1.0], x), x)

    def test_shift(self, rng):
        A, x = rng.normal(size=(5, 5)), rng.normal(size=5)
        np.testing.assert_allclose(apply_filter(A, [0.0, 1.0], x), A @ x, rtol=1e-15)

    def test_identity_graph(self, rng):
        x = rng.normal(size=4)
        np.testing.assert_allclose(apply_filter(np.eye(4), [2, 3, 4], x), 9 * x, rtol=1e-15)

    def test_matches_explicit_powers(self, rng):
        A, x, h = rng.uniform(size=(6, 6)) / 6, rng.normal(size=6), rng.normal(size=7)
        np.testing.assert_allclose(apply_filter(A, h, x), explicit_filter(A, h, x), atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            apply_filter(np.eye(3), [1.0], np.ones(4))
        with pytest.raises(ValueError):
            apply_filter(np.ones((3, 4)), [1.0], np.ones(3))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
    def test_linear_in_taps_and_signal(self, seed, alpha, beta):
        rng = np.random.default_rng(seed)
        A = rng.dirichlet(np.ones(5), size=5)
        h1, h2 = rng.normal(size=(2, 4))
        x1, x2 = rng.normal(size=(2, 5))
        np.testing.assert_allclose(
            apply_filter(A, alpha * h1 + beta * h2, x1),
            alpha * apply_filter(A, h1, x1) + beta * apply_filter(A, h2, x1),
            atol=1e-12,
        )
        np.testing.assert_allclose(
            apply_filter(A, h1, alpha * x1 + beta * x2),
            alpha * apply_filter(A, h1, x1) + beta * apply_filter(A, h1, x2),
            atol=1e-12,
        )


class TestFilteredEvaluation:
    def test_reward_tap_only(self, small_mdp, rng):
        p = policy_transition(small_mdp, random_policy(rng, 3, 2))
        h = np.zeros(5)
        h[0] = 1
        np.testing.assert_array_equal(filtered_evaluation(p, small_mdp.r, rng.normal(size=6), h), small_mdp.r)

    def test_order_zero_is_one_backup(self, small_mdp, rng):
        p = policy_transition(small_mdp, random_policy(rng, 3, 2))
        q0 = rng.normal(size=6)
        np.testing.assert_allclose(
            filtered_evaluation(p, small_mdp.r, q0, classical_coeffs(0.9, 0)), small_mdp.r + 0.9 * p @ q0, atol=1e-15
        )

    def test_order_six_matches_seven_backups(self, rng):
        mdp = random_mdp(4, 2, 0.9, rng)
        p = policy_transition(mdp, random_policy(rng, 4, 2))
        q0 = rng.normal(size=8)
        np.testing.assert_allclose(
            filtered_evaluation(p, mdp.r, q0, classical_coeffs(0.9, 6)),
            policy_evaluation_iterative(p, mdp.r, 0.9, 7, q0),
            rtol=0,
            atol=1e-12,
        )

    def test_general_taps_match_explicit_powers(self, rng):
        mdp = random_mdp(3, 2, 0.9, rng)
        p = policy_transition(mdp, random_policy(rng, 3, 2))
        q0, h = rng.normal(size=6), rng.normal(size=5)
        expected = explicit_filter(p, h[:-1], mdp.r) + h[-1] * np.linalg.matrix_power(p, 4) @ q0
        np.testing.assert_allclose(filtered_evaluation(p, mdp.r, q0, h), expected, atol=1e-12)

    def test_coeff_validation(self):
        with pytest.raises(ValueError):
            check_coeffs([1.0])
        with pytest.raises(ValueError):
            check_coeffs([1.0, np.nan])


class TestFitMinimalFilter:
    def test_target_is_reward(self, rng):
        mdp = random_mdp(3, 2, 0.9, rng)
        p = policy_transition(mdp, random_policy(rng, 3, 2))
        h, res = fit_minimal_filter(p, mdp.r, mdp.r, 2)
        assert res < 1e-12
        np.testing.assert_allclose(h, [1, 0, 0, 0], atol=1e-9)

    def test_diagonalizable_order_num_states(self, rng):
        mdp = random_mdp(3, 2, 0.9, rng)
        p = policy_transition(mdp, random_policy(rng, 3, 2))
        q_pi = policy_evaluation_exact(p, mdp.r, 0.9)
        h, res = fit_minimal_filter(p, mdp.r, q_pi, 3)
        assert res < 1e-8
        assert h[-1] == 0.0
        np.testing.assert_allclose(krylov_matrix(p, mdp.r, 3) @ h[:-1], q_pi, atol=1e-8)

    def test_cayley_hamilton_order(self, rng):
        # deterministic policy on a sparse P: P_pi is typically defective
        P = np.zeros((6, 3))
        P[np.arange(6), rng.integers(0, 3, size=6)] = 1.0
        from bellnet.mdp import TabularMdp

        mdp = TabularMdp(3, 2, P, rng.normal(size=(3, 2)), 0.9)
        pi = np.eye(2)[rng.integers(0, 2, size=3)]
        p = policy_transition(mdp, pi)
        q_pi = policy_evaluation_exact(p, mdp.r, 0.9)
        _, res = fit_minimal_filter(p, mdp.r, q_pi, 6)
        assert res < 1e-8

    def test_residual_nonincreasing_in_order(self, rng):
        mdp = random_mdp(4, 3, 0.95, rng)
        p = policy_transition(mdp, random_policy(rng, 4, 3))
        q_pi = policy_evaluation_exact(p, mdp.r, 0.95)
        res = [fit_minimal_filter(p, mdp.r, q_pi, K)[1] for K in range(0, 8)]
        assert all(b <= a + 1e-12 for a, b in zip(res, res[1:]))

    def test_permutation_invariance(self, rng):
        mdp = random_mdp(3, 2, 0.9, rng)
        p = policy_transition(mdp, random_policy(rng, 3, 2))
        q_pi = policy_evaluation_exact(p, mdp.r, 0.9)
        perm = rng.permutation(6)
        pp = np.empty_like(p)
        pp[np.ix_(perm, perm)] = p
        r2, q2 = np.empty(6), np.empty(6)
        r2[perm], q2[perm] = mdp.r, q_pi
        for K in range(4):
            assert abs(fit_minimal_filter(p, mdp.r, q_pi, K)[1] - fit_minimal_filter(pp, r2, q2, K)[1]) < 1e-10

    def test_negative_order(self, small_mdp):
        with pytest.raises(ValueError):
            fit_minimal_filter(np.eye(6), small_mdp.r, small_mdp.r, -1)
