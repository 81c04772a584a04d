import math

import numpy as np
import pytest

from conftest import brute_force_qstar, single_state, swap_chain
from qreplay.mdp import (
    ConvergenceError,
    FiniteMdp,
    MdpValidationError,
    bellman_apply,
    greedy_policy,
    random_mdp,
    sup_distance,
    theoretical_value_bound,
    validate_mdp,
    value_iteration,
)
from qreplay.rng import stream


class TestValidate:
    def test_identity_chain_is_valid(self):
        m = single_state(reward=0.0)
        assert validate_mdp(m) is m

    def test_row_sum_error_names_pair(self):
        p = np.zeros((2, 2, 2))
        p[:, :, 0] = 1.0
        p[1, 0] = [0.6, 0.3]
        with pytest.raises(MdpValidationError, match=r"\(1, 0\)"):
            validate_mdp(FiniteMdp(p, np.zeros((2, 2)), 0.5))

    def test_discount_of_one_rejected(self):
        with pytest.raises(MdpValidationError, match="discount"):
            validate_mdp(single_state(gamma=1.0))

    @pytest.mark.parametrize("gamma", [-0.1, 1.5, float("nan")])
    def test_discount_out_of_range(self, gamma):
        with pytest.raises(MdpValidationError):
            validate_mdp(single_state(gamma=gamma))

    def test_entry_out_of_range(self):
        p = np.array([[[1.5, -0.5]], [[0.0, 1.0]]])
        with pytest.raises(MdpValidationError, match="outside"):
            validate_mdp(FiniteMdp(p, np.zeros((2, 1)), 0.5))

    def test_nonfinite_reward(self):
        with pytest.raises(MdpValidationError, match="non-finite"):
            validate_mdp(FiniteMdp(np.ones((1, 1, 1)), np.array([[np.inf]]), 0.5))

    def test_empty_action_set(self):
        with pytest.raises(MdpValidationError, match="empty"):
            validate_mdp(FiniteMdp(np.zeros((1, 0, 1)), np.zeros((1, 0)), 0.5))

    def test_no_silent_renormalization(self):
        p = np.array([[[0.45, 0.45]], [[0.5, 0.5]]])
        m = FiniteMdp(p, np.zeros((2, 1)), 0.5)
        with pytest.raises(MdpValidationError):
            validate_mdp(m)
        assert m.transitions[0, 0].sum() == pytest.approx(0.9)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(MdpValidationError):
            FiniteMdp(np.ones((2, 1, 2)) / 2, np.zeros((3, 1)), 0.5)


class TestBellman:
    def test_zero_table_gives_rewards(self, small_mdps):
        for m in small_mdps:
            np.testing.assert_array_equal(bellman_apply(m, np.zeros(m.shape)), m.rewards)

    def test_single_state_fixed_point(self):
        assert bellman_apply(single_state(), np.array([[2.0]]))[0, 0] == 2.0

    def test_swap_chain_by_hand(self, swap):
        np.testing.assert_array_equal(bellman_apply(swap, np.zeros((2, 1))), [[1.0], [0.0]])

    def test_matches_explicit_sum(self, small_mdps):
        rng = np.random.default_rng(0)
        for m in small_mdps:
            q = rng.normal(size=m.shape)
            expected = np.empty(m.shape)
            for s in range(m.n_states):
                for a in range(m.n_actions):
                    expected[s, a] = m.rewards[s, a] + m.gamma * sum(
                        m.transitions[s, a, s2] * max(q[s2]) for s2 in range(m.n_states)
                    )
            np.testing.assert_allclose(bellman_apply(m, q), expected, rtol=0, atol=1e-12)

    def test_input_not_modified_and_pure(self, small_mdps):
        m = small_mdps[3]
        q = np.random.default_rng(1).normal(size=m.shape)
        before = q.copy()
        first = bellman_apply(m, q)
        second = bellman_apply(m, q)
        np.testing.assert_array_equal(q, before)
        assert first.tobytes() == second.tobytes()

    def test_dimension_mismatch(self, swap):
        with pytest.raises(ValueError):
            bellman_apply(swap, np.zeros((3, 1)))


class TestSupDistance:
    def test_equal_tables(self):
        q = np.arange(6.0).reshape(3, 2)
        assert sup_distance(q, q) == 0.0

    def test_constant_tables(self):
        assert sup_distance(np.full((2, 2), 3.0), np.ones((2, 2))) == 2.0

    def test_componentwise_max(self):
        assert sup_distance(np.array([[1.0, 4.0]]), np.array([[2.0, 2.0]])) == 2.0

    def test_mismatch(self):
        with pytest.raises(ValueError):
            sup_distance(np.zeros((2, 2)), np.zeros((2, 3)))


class TestValueIteration:
    def test_zero_rewards_one_iteration(self):
        rep = value_iteration(single_state(reward=0.0), 1e-8)
        assert rep.iterations == 1
        assert rep.q_star[0, 0] == 0.0

    def test_single_state_closed_form(self):
        rep = value_iteration(single_state(1.0, 0.5), 1e-10)
        assert abs(rep.q_star[0, 0] - 2.0) <= 1e-10

    def test_swap_chain_linear_system(self, swap):
        # q0 = 1 + g q1, q1 = g q0
        g = swap.gamma
        oracle = np.linalg.solve(np.array([[1.0, -g], [-g, 1.0]]), np.array([1.0, 0.0]))
        np.testing.assert_allclose(oracle, [4 / 3, 2 / 3], atol=1e-15)
        rep = value_iteration(swap, 1e-9)
        np.testing.assert_allclose(rep.q_star[:, 0], oracle, rtol=0, atol=1e-9)

    def test_against_policy_enumeration(self, small_mdps):
        for m in small_mdps:
            tol = 1e-8
            rep = value_iteration(m, tol)
            assert rep.error_bound <= tol
            assert sup_distance(rep.q_star, brute_force_qstar(m)) <= rep.error_bound + 1e-10

    def test_certificate_fields(self, small_mdps):
        for m in small_mdps:
            tol = 1e-6
            rep = value_iteration(m, tol)
            if m.gamma > 0:
                assert rep.error_bound == pytest.approx(m.gamma * rep.residual / (1 - m.gamma), rel=1e-15)
                assert sup_distance(bellman_apply(m, rep.q_star), rep.q_star) <= tol * (1 - m.gamma) / m.gamma
            else:
                assert rep.error_bound == rep.residual == 0.0

    def test_gamma_zero_is_one_application(self):
        m = random_mdp(3, 2, 0.0, stream(5, "mdp-gen"))
        rep = value_iteration(m, 1e-12)
        assert rep.iterations == 1
        np.testing.assert_array_equal(rep.q_star, m.rewards)

    def test_uniqueness_from_two_starts(self, small_mdps):
        for m in small_mdps:
            tol = 1e-8
            low = value_iteration(m, tol).q_star
            high = value_iteration(m, tol, q0=np.full(m.shape, theoretical_value_bound(m))).q_star
            assert sup_distance(low, high) <= 2 * tol

    def test_max_iters_exceeded(self):
        m = random_mdp(3, 2, 0.99, stream(1, "mdp-gen"))
        with pytest.raises(ConvergenceError) as info:
            value_iteration(m, 1e-12, max_iters=5)
        assert info.value.residual > 0

    def test_rejects_nonpositive_tol(self, swap):
        with pytest.raises(ValueError):
            value_iteration(swap, 0.0)


class TestBoundAndPolicy:
    def test_bound_examples(self):
        assert theoretical_value_bound(single_state(1.0, 0.5)) == 2.0
        assert theoretical_value_bound(single_state(0.0, 0.5)) == 0.0
        p = np.ones((1, 2, 1))
        assert theoretical_value_bound(FiniteMdp(p, np.array([[-3.0, 2.0]]), 0.9)) == pytest.approx(30.0)

    def test_qstar_within_bound(self, small_mdps):
        for m in small_mdps:
            q = value_iteration(m, 1e-10).q_star
            assert np.max(np.abs(q)) <= theoretical_value_bound(m) + 1e-9

    def test_greedy_tie_breaks_low(self):
        np.testing.assert_array_equal(greedy_policy(np.array([[0.0, 0.0], [1.0, 3.0]])), [0, 1])

    def test_greedy_single_action(self, swap):
        np.testing.assert_array_equal(greedy_policy(value_iteration(swap, 1e-8).q_star), [0, 0])


class TestRandomMdp:
    def test_dense_rows(self):
        m = random_mdp(4, 2, 0.5, stream(0, "mdp-gen"), sparsity=1.0)
        assert np.all(m.transitions > 0)

    def test_point_mass_rows(self):
        m = random_mdp(5, 3, 0.5, stream(0, "mdp-gen"), sparsity=0.0)
        assert np.all((m.transitions > 0).sum(axis=2) == 1)
        np.testing.assert_array_equal(m.transitions.sum(axis=2), 1.0)

    def test_deterministic(self):
        a = random_mdp(3, 2, 0.9, stream(42, "mdp-gen"), sparsity=0.5)
        b = random_mdp(3, 2, 0.9, stream(42, "mdp-gen"), sparsity=0.5)
        assert a.transitions.tobytes() == b.transitions.tobytes()
        assert a.rewards.tobytes() == b.rewards.tobytes()

    def test_reward_range(self):
        m = random_mdp(6, 3, 0.5, stream(3, "mdp-gen"), reward_range=(2.0, 3.0))
        assert m.rewards.min() >= 2.0 and m.rewards.max() <= 3.0
        assert math.isclose(m.reward_norm, np.abs(m.rewards).max())
