"""Finite discounted MDPs, the Bellman optimality operator and value iteration.

Action-value tables are plain ``float64`` arrays of shape ``(n_states, n_actions)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ROW_SUM_TOL = 1e-9


class MdpValidationError(ValueError):
    """Raised when an MDP violates one of its structural invariants."""


class ConvergenceError(RuntimeError):
    """Raised when value iteration runs out of iterations before certifying."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class FiniteMdp:
    """The tuple (S, A, P, r, gamma) with S = range(n_states), A = range(n_actions).

    ``transitions[s, a, s2]`` is P(s2 | s, a) and ``rewards[s, a]`` is r(s, a).
    Construction only coerces dtypes and checks shapes; call :func:`validate_mdp`
    for the full invariant check.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float

    def __post_init__(self):
        p = np.array(self.transitions, dtype=np.float64)
        r = np.array(self.rewards, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise MdpValidationError(f"transitions must have shape (S, A, S), got {p.shape}")
        if r.shape != p.shape[:2]:
            raise MdpValidationError(
                f"rewards shape {r.shape} does not match transitions {p.shape[:2]}"
            )
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_states, self.n_actions

    @property
    def reward_norm(self) -> float:
        """Sup norm of the reward table."""
        return float(np.max(np.abs(self.rewards))) if self.rewards.size else 0.0


@dataclass
class SolveReport:
    q_star: np.ndarray
    iterations: int
    residual: float
    error_bound: float


def validate_mdp(m: FiniteMdp) -> FiniteMdp:
    """Return ``m`` unchanged if every invariant holds, otherwise raise.

    Rows are never renormalized: a row summing to 0.9 is a generator bug, not
    something to paper over.
    """
    if m.n_states < 1 or m.n_actions < 1:
        raise MdpValidationError(
            f"empty state or action set (n_states={m.n_states}, n_actions={m.n_actions})"
        )
    if not (0.0 <= m.gamma < 1.0) or math.isnan(m.gamma):
        raise MdpValidationError(f"discount must lie in [0, 1), got {m.gamma}")
    if not np.all(np.isfinite(m.rewards)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(m.rewards))[0])
        raise MdpValidationError(f"non-finite reward at (s, a) = {bad}")
    p = m.transitions
    out_of_range = ~((p >= 0.0) & (p <= 1.0))
    if np.any(out_of_range):
        bad = tuple(int(i) for i in np.argwhere(out_of_range)[0])
        raise MdpValidationError(f"transition entry {p[bad]!r} outside [0, 1] at (s, a, s') = {bad}")
    sums = p.sum(axis=2)
    off = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(off):
        s, a = (int(i) for i in np.argwhere(off)[0])
        raise MdpValidationError(
            f"transition row (s, a) = ({s}, {a}) sums to {sums[s, a]!r}, expected 1"
        )
    return m


def _check_table(m: FiniteMdp, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != m.shape:
        raise ValueError(f"table shape {q.shape} does not match MDP shape {m.shape}")
    return q


def bellman_apply(m: FiniteMdp, q: np.ndarray) -> np.ndarray:
    """Apply the Bellman optimality operator: r + gamma * sum_s' P(s'|s,a) max_a' q(s',a').

    The sum over successor states runs in ascending index order so results are
    reproducible bit-for-bit. ``q`` is not modified.
    """
    q = _check_table(m, q)
    if not np.all(np.isfinite(q)):
        raise ValueError("action-value table has non-finite entries")
    best = q.max(axis=1)
    acc = np.zeros(m.shape)
    for s_next in range(m.n_states):
        acc += m.transitions[:, :, s_next] * best[s_next]
    return m.rewards + m.gamma * acc


def sup_distance(q1: np.ndarray, q2: np.ndarray) -> float:
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    if q1.shape != q2.shape:
        raise ValueError(f"shape mismatch: {q1.shape} vs {q2.shape}")
    if q1.size == 0:
        return 0.0
    return float(np.max(np.abs(q1 - q2)))


def theoretical_value_bound(m: FiniteMdp) -> float:
    """||r||_inf / (1 - gamma), an upper bound on ||q*||_inf."""
    return m.reward_norm / (1.0 - m.gamma)


def value_iteration(
    m: FiniteMdp,
    tol: float,
    max_iters: int = 100_000,
    q0: np.ndarray | None = None,
) -> SolveReport:
    """Iterate q <- T q until the contraction certificate guarantees ||q - q*|| <= tol.

    With ``q_next = T q`` and ``residual = ||q_next - q||``, the a-posteriori bound
    ``||q_next - q*|| <= gamma * residual / (1 - gamma)`` is used, so the loop stops
    once ``residual <= tol * (1 - gamma) / gamma`` and returns ``q_next``.
    For gamma = 0 a single application from ``q0`` is already exact.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros(m.shape) if q0 is None else _check_table(m, q0).copy()
    gamma = m.gamma

    if gamma == 0.0:
        q_next = bellman_apply(m, q)
        residual = sup_distance(bellman_apply(m, q_next), q_next)
        return SolveReport(q_next, 1, residual, residual)

    threshold = tol * (1.0 - gamma) / gamma
    residual = math.inf
    for it in range(1, max_iters + 1):
        q_next = bellman_apply(m, q)
        residual = sup_distance(q_next, q)
        q = q_next
        if residual <= threshold:
            return SolveReport(q, it, residual, gamma * residual / (1.0 - gamma))
    raise ConvergenceError(
        f"value iteration did not certify tol={tol} within {max_iters} iterations "
        f"(last residual {residual:.3e})",
        residual=residual,
        iterations=max_iters,
    )


def greedy_policy(q: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximizer, i.e. lowest-index tie-breaking
    return np.argmax(np.asarray(q), axis=1)


def random_mdp(
    n_states: int,
    n_actions: int,
    gamma: float,
    rng: np.random.Generator,
    sparsity: float = 1.0,
    reward_range: tuple[float, float] = (-1.0, 1.0),
) -> FiniteMdp:
    """Draw a random MDP.

    Each row's support has ``1 + round(sparsity * (n_states - 1))`` successors chosen
    uniformly without replacement; positive weights on the support are normalized.
    ``sparsity=0`` gives point-mass kernels, ``sparsity=1`` fully dense rows.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    lo, hi = reward_range
    if lo > hi:
        raise ValueError(f"empty reward range {reward_range}")
    k = 1 + int(round(sparsity * (n_states - 1)))
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            support = rng.choice(n_states, size=k, replace=False)
            weights = 1.0 - rng.random(k)  # in (0, 1]
            p[s, a, support] = weights / weights.sum()
    rewards = rng.uniform(lo, hi, size=(n_states, n_actions))
    return validate_mdp(FiniteMdp(p, rewards, gamma))
