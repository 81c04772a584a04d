import itertools

import numpy as np
import pytest

from qreplay.mdp import FiniteMdp, random_mdp
from qreplay.rng import stream


def swap_chain(gamma=0.5):
    """Two states that swap deterministically; reward 1 in state 0, 0 in state 1."""
    p = np.zeros((2, 1, 2))
    p[0, 0, 1] = 1.0
    p[1, 0, 0] = 1.0
    return FiniteMdp(p, np.array([[1.0], [0.0]]), gamma)


def single_state(reward=1.0, gamma=0.5):
    return FiniteMdp(np.ones((1, 1, 1)), np.array([[reward]]), gamma)


def brute_force_qstar(m: FiniteMdp) -> np.ndarray:
    """q* by enumerating deterministic policies and solving each one's linear system.

    For every policy pi, q_pi = r + gamma P v_pi with v_pi = (I - gamma P_pi)^-1 r_pi;
    q*(s, a) is the largest q_pi(s, a) over all policies.
    """
    n_s, n_a = m.shape
    best = np.full(m.shape, -np.inf)
    for policy in itertools.product(range(n_a), repeat=n_s):
        idx = np.arange(n_s), np.array(policy)
        p_pi = m.transitions[idx]
        v = np.linalg.solve(np.eye(n_s) - m.gamma * p_pi, m.rewards[idx])
        best = np.maximum(best, m.rewards + m.gamma * m.transitions @ v)
    return best


@pytest.fixture
def swap():
    return swap_chain()


@pytest.fixture
def small_mdps():
    """A handful of seeded random MDPs of mixed shape, discount and sparsity."""
    shapes = [(1, 1, 0.0), (2, 2, 0.5), (3, 2, 0.9), (4, 3, 0.7), (5, 3, 0.0), (2, 3, 0.95)]
    return [
        random_mdp(n_s, n_a, g, stream(100 + i, "mdp-gen"), sparsity=[0.0, 0.5, 1.0][i % 3])
        for i, (n_s, n_a, g) in enumerate(shapes)
    ]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
