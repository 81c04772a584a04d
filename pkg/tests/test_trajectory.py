import numpy as np
import pytest
from scipy import stats

from conftest import swap_chain
from qreplay.mdp import FiniteMdp, random_mdp
from qreplay.rng import stream
from qreplay.trajectory import (
    SamplerKind,
    TrajectoryLog,
    Transition,
    generate,
    next_state_sample,
    occurrence_prefix,
    rescan_occurrences,
)


class FixedUniform:
    """Stand-in generator returning preset uniforms, to pin inverse-CDF behavior."""

    def __init__(self, *values):
        self.values = list(values)

    def random(self):
        return self.values.pop(0)


def coin_mdp(p0=0.5):
    p = np.array([[[p0, 1 - p0]], [[p0, 1 - p0]]])
    return FiniteMdp(p, np.zeros((2, 1)), 0.5)


class TestNextStateSample:
    def test_inverse_cdf_boundaries(self):
        m = coin_mdp()
        assert next_state_sample(m, 0, 0, FixedUniform(0.25)) == 0
        assert next_state_sample(m, 0, 0, FixedUniform(0.75)) == 1
        # u exactly on the cdf step falls into the next bucket
        assert next_state_sample(m, 0, 0, FixedUniform(0.5)) == 1

    def test_zero_probability_successor_never_drawn(self):
        p = np.array([[[0.0, 1.0, 0.0]]] * 3)
        m = FiniteMdp(p, np.zeros((3, 1)), 0.5)
        for u in (0.0, 0.3, 0.9999999999):
            assert next_state_sample(m, 0, 0, FixedUniform(u)) == 1

    def test_frequencies_within_three_sigma(self):
        m = random_mdp(4, 1, 0.5, stream(7, "mdp-gen"))
        rng = np.random.default_rng(11)
        n = 100_000
        counts = np.bincount([next_state_sample(m, 2, 0, rng) for _ in range(n)], minlength=4)
        p = m.transitions[2, 0]
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) <= 3 * sigma)

    def test_chi_square_goodness_of_fit(self):
        m = random_mdp(5, 2, 0.5, stream(8, "mdp-gen"))
        rng = np.random.default_rng(12)
        n = 50_000
        counts = np.bincount([next_state_sample(m, 1, 1, rng) for _ in range(n)], minlength=5)
        expected = n * m.transitions[1, 1]
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < stats.chi2.ppf(0.999, df=4)


class TestGenerate:
    def test_round_robin_schedule(self):
        m = random_mdp(2, 2, 0.5, stream(0, "mdp-gen"))
        log = generate(m, SamplerKind.round_robin(), 8, stream(0, "trajectory"))
        lex = [(0, 0), (0, 1), (1, 0), (1, 1)]
        assert list(zip(log.states.tolist(), log.actions.tolist())) == lex + lex
        for s in range(2):
            for a in range(2):
                t0 = lex.index((s, a))
                np.testing.assert_array_equal(log.occurrences[s][a], [t0, t0 + 4])

    def test_horizon_zero(self):
        log = generate(swap_chain(), SamplerKind.uniform_iid(), 0, stream(0, "trajectory"))
        assert len(log) == 0
        assert log.visit_counts.sum() == 0

    def test_negative_horizon(self):
        with pytest.raises(ValueError):
            generate(swap_chain(), SamplerKind.round_robin(), -1, stream(0, "trajectory"))

    def test_uniform_iid_balanced(self):
        m = random_mdp(3, 2, 0.5, stream(1, "mdp-gen"))
        h = 60_000
        log = generate(m, SamplerKind.uniform_iid(), h, stream(1, "trajectory"))
        expected = h / 6
        assert np.all(np.abs(log.visit_counts - expected) <= 0.05 * expected)

    @pytest.mark.parametrize(
        "sampler",
        [SamplerKind.round_robin(), SamplerKind.uniform_iid(), SamplerKind.follow_with_restart()],
        ids=lambda k: k.kind,
    )
    def test_successors_match_sequential_draws(self, sampler):
        m = random_mdp(4, 3, 0.5, stream(2, "mdp-gen"), sparsity=0.5)
        log = generate(m, sampler, 400, stream(2, "trajectory"))
        _, trans_rng = stream(2, "trajectory").spawn(2)
        for t, (s, a, s_next) in enumerate(log.steps):
            assert next_state_sample(m, s, a, trans_rng) == s_next, t

    def test_deterministic_given_seed(self):
        m = random_mdp(3, 2, 0.5, stream(3, "mdp-gen"))
        for sampler in (SamplerKind.uniform_iid(), SamplerKind.follow_with_restart(0.3, 0.1, np.eye(3, 2))):
            a = generate(m, sampler, 200, stream(3, "trajectory"))
            b = generate(m, sampler, 200, stream(3, "trajectory"))
            assert a.states.tobytes() == b.states.tobytes()
            assert a.next_states.tobytes() == b.next_states.tobytes()

    def test_follow_without_restart_is_a_path(self):
        m = random_mdp(4, 2, 0.5, stream(4, "mdp-gen"))
        log = generate(m, SamplerKind.follow_with_restart(1.0, 0.0), 300, stream(4, "trajectory"))
        np.testing.assert_array_equal(log.states[1:], log.next_states[:-1])

    def test_greedy_follow_uses_table(self):
        m = random_mdp(3, 2, 0.5, stream(5, "mdp-gen"))
        table = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
        log = generate(m, SamplerKind.follow_with_restart(0.0, 0.2, table), 300, stream(5, "trajectory"))
        np.testing.assert_array_equal(log.actions, np.argmax(table, axis=1)[log.states])


class TestOccurrences:
    def test_rescan_matches(self):
        m = random_mdp(3, 3, 0.5, stream(6, "mdp-gen"))
        log = generate(m, SamplerKind.follow_with_restart(), 500, stream(6, "trajectory"))
        again = rescan_occurrences(log)
        for s in range(3):
            for a in range(3):
                assert log.occurrences[s][a].tolist() == again[s][a]
                assert log.visit_counts[s, a] == len(again[s][a])

    def test_occurrence_prefix_examples(self):
        log = TrajectoryLog.from_arrays(2, 2, [0, 0, 0], [0, 1, 0], [1, 1, 0])
        np.testing.assert_array_equal(occurrence_prefix(log, 0, 0, 3), [0, 2])
        np.testing.assert_array_equal(occurrence_prefix(log, 0, 0, 2), [0])
        np.testing.assert_array_equal(occurrence_prefix(log, 0, 0, 0), [])
        np.testing.assert_array_equal(occurrence_prefix(log, 1, 1, 3), [])

    def test_occurrence_prefix_range(self):
        log = TrajectoryLog.from_arrays(2, 2, [0], [0], [1])
        with pytest.raises(ValueError):
            occurrence_prefix(log, 0, 0, 2)
        with pytest.raises(IndexError):
            occurrence_prefix(log, 2, 0, 1)


class TestLog:
    def test_from_arrays_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            TrajectoryLog.from_arrays(2, 2, [0, 2], [0, 0], [0, 0])
        with pytest.raises(ValueError):
            TrajectoryLog.from_arrays(2, 2, [0], [0, 1], [0])

    def test_indexing_and_prefix(self):
        log = TrajectoryLog.from_arrays(2, 2, [0, 1, 1], [1, 0, 1], [1, 0, 0])
        assert log[1] == Transition(1, 0, 0)
        short = log.prefix(2)
        assert len(short) == 2
        assert short.visit_counts.sum() == 2
        with pytest.raises(ValueError):
            log.prefix(4)


class TestSamplerParse:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("round_robin", SamplerKind.round_robin()),
            ("uniform_iid", SamplerKind.uniform_iid()),
            ("follow_with_restart", SamplerKind.follow_with_restart()),
            ("follow_with_restart(0.3, 0.1)", SamplerKind.follow_with_restart(0.3, 0.1)),
        ],
    )
    def test_round_trip(self, text, expected):
        parsed = SamplerKind.parse(text)
        assert parsed == expected
        assert SamplerKind.parse(parsed.describe()) == parsed

    @pytest.mark.parametrize("text", ["zigzag", "round_robin(1)", "follow_with_restart(1,2,3)",
                                      "follow_with_restart(2)", "uniform_iid("])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            SamplerKind.parse(text)
