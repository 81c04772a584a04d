"""Sampling finite prefixes of the trajectory process (S_t, A_t, S'_t).

The successor S'_t is always drawn from P(. | S_t, A_t). How (S_t, A_t) is chosen is
up to the sampler, and nothing ties S_{t+1} to S'_t, so samplers may teleport.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from qreplay.mdp import FiniteMdp


class Transition(NamedTuple):
    s: int
    a: int
    s_next: int


@dataclass
class TrajectoryLog:
    """A trajectory prefix of length ``len(self)`` plus occurrence bookkeeping.

    ``occurrences[s][a]`` holds the increasing times t with (S_t, A_t) = (s, a).
    """

    n_states: int
    n_actions: int
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    occurrences: list[list[np.ndarray]] = field(repr=False)
    visit_counts: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, n_states, n_actions, states, actions, next_states) -> TrajectoryLog:
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions, dtype=np.int64)
        next_states = np.asarray(next_states, dtype=np.int64)
        if not (len(states) == len(actions) == len(next_states)):
            raise ValueError("state, action and successor arrays differ in length")
        for name, arr, bound in (
            ("state", states, n_states),
            ("action", actions, n_actions),
            ("successor", next_states, n_states),
        ):
            if arr.size and (arr.min() < 0 or arr.max() >= bound):
                raise ValueError(f"{name} index out of range [0, {bound})")
        pair = states * n_actions + actions
        occ = [
            [np.flatnonzero(pair == s * n_actions + a) for a in range(n_actions)]
            for s in range(n_states)
        ]
        counts = np.array([[len(o) for o in row] for row in occ], dtype=np.int64).reshape(
            n_states, n_actions
        )
        return cls(n_states, n_actions, states, actions, next_states, occ, counts)

    @classmethod
    def empty(cls, n_states: int, n_actions: int) -> TrajectoryLog:
        return cls.from_arrays(n_states, n_actions, [], [], [])

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, t: int) -> Transition:
        return Transition(int(self.states[t]), int(self.actions[t]), int(self.next_states[t]))

    @property
    def steps(self) -> list[Transition]:
        return [Transition(*row) for row in zip(self.states.tolist(), self.actions.tolist(),
                                                self.next_states.tolist())]

    def prefix(self, horizon: int) -> TrajectoryLog:
        """The first ``horizon`` steps as a log of their own."""
        if not 0 <= horizon <= len(self):
            raise ValueError(f"horizon {horizon} outside [0, {len(self)}]")
        return TrajectoryLog.from_arrays(
            self.n_states, self.n_actions, self.states[:horizon], self.actions[:horizon],
            self.next_states[:horizon],
        )


def rescan_occurrences(log: TrajectoryLog) -> list[list[list[int]]]:
    """Rebuild occurrence lists by walking the steps one at a time."""
    occ = [[[] for _ in range(log.n_actions)] for _ in range(log.n_states)]
    for t, (s, a, _) in enumerate(log.steps):
        occ[s][a].append(t)
    return occ


@dataclass(frozen=True)
class SamplerKind:
    """How (S_t, A_t) is chosen.

    ``round_robin`` sweeps S x A lexicographically, ``uniform_iid`` draws pairs
    uniformly, and ``follow_with_restart`` follows S_{t+1} = S'_t except for a
    uniform teleport with probability ``restart_prob``; its actions are uniform
    with probability ``epsilon`` and greedy w.r.t. ``table`` otherwise.
    """

    kind: str
    epsilon: float = 1.0
    restart_prob: float = 0.05
    table: np.ndarray | None = field(default=None, compare=False, repr=False)

    KINDS = ("round_robin", "uniform_iid", "follow_with_restart")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; expected one of {self.KINDS}")
        for name in ("epsilon", "restart_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")

    @classmethod
    def round_robin(cls) -> SamplerKind:
        return cls("round_robin")

    @classmethod
    def uniform_iid(cls) -> SamplerKind:
        return cls("uniform_iid")

    @classmethod
    def follow_with_restart(cls, epsilon=1.0, restart_prob=0.05, table=None) -> SamplerKind:
        return cls("follow_with_restart", epsilon, restart_prob, table)

    @classmethod
    def parse(cls, text: str) -> SamplerKind:
        """Parse ``round_robin``, ``uniform_iid`` or ``follow_with_restart[(eps[, restart])]``."""
        name, args = _split_call(text)
        if name == "follow_with_restart":
            if len(args) > 2:
                raise ValueError(f"follow_with_restart takes at most 2 arguments: {text!r}")
            return cls.follow_with_restart(*args)
        if args:
            raise ValueError(f"sampler {name!r} takes no arguments: {text!r}")
        return cls(name)

    def describe(self) -> str:
        if self.kind == "follow_with_restart":
            return f"follow_with_restart({self.epsilon!r},{self.restart_prob!r})"
        return self.kind


def _split_call(text: str) -> tuple[str, list[float]]:
    text = text.strip()
    if "(" not in text:
        return text, []
    if not text.endswith(")"):
        raise ValueError(f"malformed call syntax {text!r}")
    name, _, rest = text.partition("(")
    body = rest[:-1].strip()
    args = [float(x) for x in body.split(",")] if body else []
    return name.strip(), args


def _inverse_cdf(row: np.ndarray, u: float) -> int:
    cdf = np.cumsum(row)
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= len(row):
        # u landed above a cdf that rounds to slightly below 1
        idx = int(np.flatnonzero(row > 0)[-1])
    return idx


def next_state_sample(m: FiniteMdp, s: int, a: int, rng: np.random.Generator) -> int:
    """Draw S' ~ P(. | s, a) by inverse CDF over ascending successor index.

    Consumes exactly one uniform variate from ``rng``.
    """
    return _inverse_cdf(m.transitions[s, a], rng.random())


def _successors(m: FiniteMdp, states: np.ndarray, actions: np.ndarray, u: np.ndarray) -> np.ndarray:
    # vectorized _inverse_cdf: count of cdf entries <= u is searchsorted(side="right")
    cdf = np.cumsum(m.transitions, axis=2)
    idx = (cdf[states, actions] <= u[:, None]).sum(axis=1)
    last_pos = np.array(
        [[np.flatnonzero(m.transitions[s, a] > 0)[-1] for a in range(m.n_actions)]
         for s in range(m.n_states)]
    ).reshape(m.n_states, m.n_actions)
    over = idx >= m.n_states
    idx[over] = last_pos[states[over], actions[over]]
    return idx.astype(np.int64)


def generate(
    m: FiniteMdp, kind: SamplerKind, horizon: int, rng: np.random.Generator
) -> TrajectoryLog:
    """Sample a trajectory prefix of exactly ``horizon`` transitions.

    ``rng`` is split into a selection stream (which pair to visit) and a
    transition stream (one uniform per step, fed to the inverse CDF), so the
    successor draws at step t are the t-th uniform of the transition stream
    whatever the sampler does.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    n_s, n_a = m.shape
    select_rng, trans_rng = rng.spawn(2)
    u = trans_rng.random(horizon)

    if kind.kind == "round_robin":
        pair = np.arange(horizon, dtype=np.int64) % (n_s * n_a)
        states, actions = pair // n_a, pair % n_a
        return TrajectoryLog.from_arrays(n_s, n_a, states, actions, _successors(m, states, actions, u))
    if kind.kind == "uniform_iid":
        pair = select_rng.integers(0, n_s * n_a, size=horizon)
        states, actions = pair // n_a, pair % n_a
        return TrajectoryLog.from_arrays(n_s, n_a, states, actions, _successors(m, states, actions, u))
    return _follow_with_restart(m, kind, horizon, u, select_rng)


def _follow_with_restart(m, kind, horizon, u, select_rng):
    n_s, n_a = m.shape
    restart_u = select_rng.random(horizon)
    restart_state = select_rng.integers(0, n_s, size=horizon).tolist()
    explore_u = select_rng.random(horizon)
    random_action = select_rng.integers(0, n_a, size=horizon).tolist()
    greedy = None if kind.table is None else np.argmax(kind.table, axis=1).tolist()

    cdf = np.cumsum(m.transitions, axis=2).tolist()
    rows = m.transitions.tolist()
    states, actions, nexts = [], [], []
    s = None
    for t in range(horizon):
        if s is None or restart_u[t] < kind.restart_prob:
            s = restart_state[t]
        if greedy is None or explore_u[t] < kind.epsilon:
            a = random_action[t]
        else:
            a = greedy[s]
        c = cdf[s][a]
        s_next = next((i for i, v in enumerate(c) if v > u[t]), None)
        if s_next is None:
            s_next = max(i for i, p in enumerate(rows[s][a]) if p > 0)
        states.append(s)
        actions.append(a)
        nexts.append(s_next)
        s = s_next

    return TrajectoryLog.from_arrays(n_s, n_a, states, actions, nexts)


def occurrence_prefix(log: TrajectoryLog, s: int, a: int, t: int) -> np.ndarray:
    """Visit times of (s, a) in the half-open window [0, t)."""
    if not (0 <= s < log.n_states and 0 <= a < log.n_actions):
        raise IndexError(f"pair ({s}, {a}) out of range")
    if not 0 <= t <= len(log):
        raise ValueError(f"time {t} outside [0, {len(log)}]")
    times = log.occurrences[s][a]
    return times[: np.searchsorted(times, t, side="left")]
