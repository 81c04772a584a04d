"""Stepsize schedules, Robbins-Monro partial sums and the tabular Q-learning recursion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from qreplay.mdp import FiniteMdp
from qreplay.trajectory import TrajectoryLog, Transition, _split_call


@dataclass(frozen=True)
class StepsizeSchedule:
    """A stepsize rule producing values in [0, 1].

    * ``constant``: alpha_t = c
    * ``global_polynomial``: alpha_t = c / (t + 1) ** p
    * ``per_visit_polynomial``: alpha_t = c / (n + 1) ** p, n = earlier visits of (S_t, A_t)
    """

    kind: str
    c: float
    p: float = 0.0

    KINDS = ("constant", "global_polynomial", "per_visit_polynomial")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}; expected one of {self.KINDS}")
        if not 0.0 < self.c <= 1.0:
            raise ValueError(f"schedule constant must lie in (0, 1], got {self.c}")
        if self.p < 0.0:
            raise ValueError(f"schedule exponent must be nonnegative, got {self.p}")

    @classmethod
    def constant(cls, c: float) -> StepsizeSchedule:
        return cls("constant", c)

    @classmethod
    def global_polynomial(cls, c: float, p: float) -> StepsizeSchedule:
        return cls("global_polynomial", c, p)

    @classmethod
    def per_visit_polynomial(cls, c: float, p: float) -> StepsizeSchedule:
        return cls("per_visit_polynomial", c, p)

    @classmethod
    def harmonic(cls) -> StepsizeSchedule:
        return cls.per_visit_polynomial(1.0, 1.0)

    @classmethod
    def parse(cls, text: str) -> StepsizeSchedule:
        """Parse e.g. ``constant(0.1)``, ``global_polynomial(1,0.8)`` or ``harmonic``."""
        name, args = _split_call(text)
        if name == "harmonic" and not args:
            return cls.harmonic()
        if name == "constant" and len(args) == 1:
            return cls.constant(args[0])
        if name in ("global_polynomial", "per_visit_polynomial") and len(args) == 2:
            return cls(name, *args)
        raise ValueError(f"malformed stepsize {text!r}")

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant({self.c!r})"
        return f"{self.kind}({self.c!r},{self.p!r})"


def stepsize_at(sch: StepsizeSchedule, t: int, visit_count_before: int) -> float:
    if sch.kind == "constant":
        return sch.c
    n = t if sch.kind == "global_polynomial" else visit_count_before
    return sch.c / (n + 1) ** sch.p


def stepsize_sequence(log: TrajectoryLog, sch: StepsizeSchedule) -> np.ndarray:
    """alpha_t for every step t of ``log``."""
    alphas = np.empty(len(log))
    for s in range(log.n_states):
        for a in range(log.n_actions):
            for n, t in enumerate(log.occurrences[s][a].tolist()):
                alphas[t] = stepsize_at(sch, t, n)
    return alphas


@dataclass
class RMDiagnostics:
    """Per-pair partial sums of alpha_t and alpha_t**2 over the pair's visit times.

    ``low_progress`` flags pairs whose sum of stepsizes is still below
    ``min_sum_alpha``; ``not_summable`` flags squared sums above ``max_sum_alpha_sq``.
    """

    sum_alpha: np.ndarray
    sum_alpha_sq: np.ndarray
    low_progress: np.ndarray
    not_summable: np.ndarray


def rm_diagnostics(
    log: TrajectoryLog,
    sch: StepsizeSchedule,
    min_sum_alpha: float = 1.0,
    max_sum_alpha_sq: float = 2.0,
) -> RMDiagnostics:
    # brute-force rescan of the log; sums accumulate in ascending t per pair
    sums = [[0.0] * log.n_actions for _ in range(log.n_states)]
    sq = [[0.0] * log.n_actions for _ in range(log.n_states)]
    counts = [[0] * log.n_actions for _ in range(log.n_states)]
    for t, (s, a, _) in enumerate(log.steps):
        alpha = stepsize_at(sch, t, counts[s][a])
        counts[s][a] += 1
        sums[s][a] += alpha
        sq[s][a] += alpha * alpha
    sum_alpha = np.array(sums).reshape(log.n_states, log.n_actions)
    sum_sq = np.array(sq).reshape(log.n_states, log.n_actions)
    return RMDiagnostics(sum_alpha, sum_sq, sum_alpha < min_sum_alpha, sum_sq > max_sum_alpha_sq)


def q_step(m: FiniteMdp, q: np.ndarray, tr: Transition, alpha: float) -> np.ndarray:
    """One Q-learning update at the visited pair; every other entry is copied as is."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"stepsize must lie in [0, 1], got {alpha}")
    s, a, s_next = tr
    if not (0 <= s < m.n_states and 0 <= a < m.n_actions and 0 <= s_next < m.n_states):
        raise IndexError(f"transition {tr} out of range for MDP of shape {m.shape}")
    out = np.array(q, dtype=np.float64, copy=True)
    target = float(m.rewards[s, a]) + m.gamma * float(max(out[s_next].tolist()))
    out[s, a] = (1.0 - alpha) * float(out[s, a]) + alpha * target
    return out


@dataclass
class Checkpoint:
    t: int
    table: np.ndarray
    sup_error: float | None


@dataclass
class QRunReport:
    checkpoints: list[Checkpoint]
    final_table: np.ndarray
    sum_alpha: np.ndarray
    sum_alpha_sq: np.ndarray
    error_trace: np.ndarray | None = field(default=None, repr=False)

    @property
    def rm_partial_sums(self) -> np.ndarray:
        """Shape (S, A, 2): (sum alpha, sum alpha**2) per pair."""
        return np.stack([self.sum_alpha, self.sum_alpha_sq], axis=-1)

    def table_at(self, t: int) -> np.ndarray:
        for cp in self.checkpoints:
            if cp.t == t:
                return cp.table
        raise KeyError(f"no snapshot at t={t}")


def run_qlearning(
    m: FiniteMdp,
    log: TrajectoryLog,
    sch: StepsizeSchedule,
    q_star: np.ndarray | None = None,
    checkpoint_every: int = 0,
    checkpoint_times=None,
    record_errors: bool = False,
) -> QRunReport:
    """Run Q-learning from Q_0 = 0 along ``log``.

    A snapshot of Q_t is kept for every t that is a positive multiple of
    ``checkpoint_every`` or listed in ``checkpoint_times`` (which may include 0).
    ``sup_error`` is filled in only when ``q_star`` is given. With
    ``record_errors`` the full sequence ||Q_t - q_star|| for t = 0..len(log) is kept.
    """
    if log.n_states != m.n_states or log.n_actions != m.n_actions:
        raise ValueError("log was not generated against this MDP")
    horizon = len(log)
    wanted = set()
    if checkpoint_every > 0:
        wanted.update(range(checkpoint_every, horizon + 1, checkpoint_every))
    if checkpoint_times is not None:
        wanted.update(int(t) for t in checkpoint_times if 0 <= t <= horizon)
    if record_errors and q_star is None:
        raise ValueError("record_errors requires q_star")

    n_s, n_a = m.shape
    gamma = m.gamma
    rewards = m.rewards.tolist()
    q = [[0.0] * n_a for _ in range(n_s)]
    counts = [[0] * n_a for _ in range(n_s)]
    sums = [[0.0] * n_a for _ in range(n_s)]
    sq = [[0.0] * n_a for _ in range(n_s)]
    qs = None if q_star is None else np.asarray(q_star, dtype=np.float64)
    qs_rows = None if qs is None else qs.tolist()
    trace = np.empty(horizon + 1) if record_errors else None
    checkpoints: list[Checkpoint] = []

    def snapshot(t):
        table = np.array(q).reshape(n_s, n_a)
        err = None if qs is None else float(np.max(np.abs(table - qs)))
        checkpoints.append(Checkpoint(t, table, err))

    def sup_error():
        return max(abs(v - w) for row, srow in zip(q, qs_rows) for v, w in zip(row, srow))

    kind, c, p = sch.kind, sch.c, sch.p
    states = log.states.tolist()
    actions = log.actions.tolist()
    nexts = log.next_states.tolist()
    for t in range(horizon):
        if t in wanted:
            snapshot(t)
        if trace is not None:
            trace[t] = sup_error()
        s, a, s_next = states[t], actions[t], nexts[t]
        if kind == "constant":
            alpha = c
        elif kind == "global_polynomial":
            alpha = c / (t + 1) ** p
        else:
            alpha = c / (counts[s][a] + 1) ** p
        counts[s][a] += 1
        sums[s][a] += alpha
        sq[s][a] += alpha * alpha
        target = rewards[s][a] + gamma * max(q[s_next])
        q[s][a] = (1.0 - alpha) * q[s][a] + alpha * target
    if horizon in wanted:
        snapshot(horizon)
    if trace is not None:
        trace[horizon] = sup_error()

    return QRunReport(
        checkpoints=checkpoints,
        final_table=np.array(q).reshape(n_s, n_a),
        sum_alpha=np.array(sums).reshape(n_s, n_a),
        sum_alpha_sq=np.array(sq).reshape(n_s, n_a),
        error_trace=trace,
    )


def rm_average(xi, beta, x0: float) -> np.ndarray:
    """Trace X_0..X_T of the averaging recursion X_{k+1} = (1 - beta_k) X_k + beta_k xi_k."""
    xi = np.asarray(xi, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if xi.shape != beta.shape or xi.ndim != 1:
        raise ValueError(f"xi and beta must be 1-d of equal length, got {xi.shape} and {beta.shape}")
    if np.any((beta < 0.0) | (beta > 1.0)):
        raise ValueError("beta must take values in [0, 1]")
    out = np.empty(len(xi) + 1)
    x = float(x0)
    out[0] = x
    for k, (b, target) in enumerate(zip(beta.tolist(), xi.tolist()), start=1):
        x = (1.0 - b) * x + b * target
        out[k] = x
    return out
