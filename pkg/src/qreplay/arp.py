"""The action-replay process (ARP) built from a trajectory prefix and its stepsizes.

The ARP lives on layered states (s, k) plus an absorbing state. From (s, k) under
action a it jumps to the replayed state (S'_{t'}, t') for a visit t' < k of (s, a)
with probability

    alpha_{t'} * prod over later visits tau in (t', k) of (1 - alpha_tau)

and to the absorbing state with the product over all visits before k. Its
optimal action-values at layer k coincide with the Q-learning iterate Q_k.

Everything attached to a pair only changes when that pair is visited, so layer
snapshots are stored once per visit ("version" n = state after n visits) and
looked up with a bisection on the visit times.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from qreplay.mdp import FiniteMdp
from qreplay.qlearning import StepsizeSchedule, stepsize_sequence
from qreplay.trajectory import TrajectoryLog, Transition

ABSORB = "absorb"


def _from_definition(alphas: np.ndarray) -> tuple[np.ndarray, float]:
    """Entry probabilities and absorbing mass for visits with stepsizes ``alphas``.

    Products of (1 - alpha) are accumulated from the most recent visit backwards.
    """
    n = len(alphas)
    if n == 0:
        return np.empty(0), 1.0
    back = np.cumprod((1.0 - alphas)[::-1])  # back[k]: product over the k + 1 latest visits
    suffix = np.empty(n)
    suffix[n - 1] = 1.0
    suffix[: n - 1] = back[: n - 1][::-1]
    return alphas * suffix, float(back[n - 1])


class ActionReplayProcess:
    """Layered ARP up to layer ``horizon``.

    Parameters
    ----------
    m:
        The underlying MDP; only its shape and rewards are used.
    retain_entries:
        Keep every per-visit version of the entry probability vectors. This costs
        memory quadratic in the visit count of a pair. When off, entries at past
        layers are re-evaluated from the stored stepsizes on demand.
    """

    def __init__(self, m: FiniteMdp, retain_entries: bool = True):
        n_s, n_a = m.shape
        self.n_states, self.n_actions = n_s, n_a
        self.rewards = np.array(m.rewards)
        self.retain_entries = retain_entries
        self.horizon = 0
        pairs = [(s, a) for s in range(n_s) for a in range(n_a)]
        self._times = {p: [] for p in pairs}
        self._alphas = {p: [] for p in pairs}
        self._s_primes = {p: [] for p in pairs}
        self._probs = {p: np.empty(0) for p in pairs}
        self._absorb_hist = {p: [1.0] for p in pairs}
        self._reward_hist = {p: [0.0] for p in pairs}
        self._dyn_hist = {p: [np.zeros(n_s)] for p in pairs}
        self._prob_hist = {p: [np.empty(0)] for p in pairs} if retain_entries else None

    # -- incremental construction -------------------------------------------------

    def extend(self, tr: Transition, alpha: float) -> ActionReplayProcess:
        """Add layer ``horizon + 1`` given step ``horizon`` of the log. Mutates in place.

        Only the visited pair changes: its old entries and absorbing mass are
        scaled by (1 - alpha) and a new entry of probability alpha is appended.
        """
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"stepsize must lie in [0, 1], got {alpha}")
        s, a, s_next = tr
        if not (0 <= s < self.n_states and 0 <= a < self.n_actions and 0 <= s_next < self.n_states):
            raise IndexError(f"transition {tr} out of range")
        key = (s, a)
        keep = 1.0 - alpha
        t = self.horizon
        self._times[key].append(t)
        self._alphas[key].append(alpha)
        self._s_primes[key].append(s_next)
        probs = np.append(self._probs[key] * keep, alpha)
        self._probs[key] = probs
        self._absorb_hist[key].append(self._absorb_hist[key][-1] * keep)
        r = float(self.rewards[s, a])
        self._reward_hist[key].append(keep * self._reward_hist[key][-1] + alpha * r)
        dyn = self._dyn_hist[key][-1] * keep
        dyn[s_next] += alpha
        self._dyn_hist[key].append(dyn)
        if self._prob_hist is not None:
            self._prob_hist[key].append(probs)
        self.horizon = t + 1
        return self

    # -- lookups ----------------------------------------------------------------

    def _version(self, s: int, a: int, layer: int | None) -> int:
        if layer is None:
            layer = self.horizon
        if not 0 <= layer <= self.horizon:
            raise ValueError(f"layer {layer} outside [0, {self.horizon}]")
        return bisect_left(self._times[(s, a)], layer)

    def visit_times(self, s: int, a: int) -> np.ndarray:
        return np.array(self._times[(s, a)], dtype=np.int64)

    def stepsizes(self, s: int, a: int) -> np.ndarray:
        return np.array(self._alphas[(s, a)])

    def entries(self, s: int, a: int, layer: int | None = None):
        """Replay entries out of (s, layer) under a.

        Returns ``(times, probs, s_primes)``: entry j is the jump to ARP state
        ``(s_primes[j], times[j])`` with probability ``probs[j]``.
        """
        n = self._version(s, a, layer)
        key = (s, a)
        times = np.array(self._times[key][:n], dtype=np.int64)
        s_primes = np.array(self._s_primes[key][:n], dtype=np.int64)
        if n == len(self._times[key]):
            probs = self._probs[key]
        elif self._prob_hist is not None:
            probs = self._prob_hist[key][n]
        else:
            probs, _ = _from_definition(np.array(self._alphas[key][:n]))
        return times, probs, s_primes

    def absorb_mass(self, s: int, a: int, layer: int | None = None) -> float:
        return self._absorb_hist[(s, a)][self._version(s, a, layer)]

    def effective_reward(self, s: int, a: int, layer: int | None = None) -> float:
        return self._reward_hist[(s, a)][self._version(s, a, layer)]

    def pooled_dynamics(self, s: int, a: int, layer: int | None = None) -> np.ndarray:
        return self._dyn_hist[(s, a)][self._version(s, a, layer)]

    def kernel(self, state, a: int) -> dict:
        """Successor distribution of an ARP state: ``(s, k)`` tuples or ``ABSORB``."""
        if state == ABSORB:
            return {ABSORB: 1.0}
        s, k = state
        times, probs, s_primes = self.entries(s, a, k)
        out = {(int(sp), int(t)): float(p) for t, p, sp in zip(times, probs, s_primes)}
        out[ABSORB] = self.absorb_mass(s, a, k)
        return out

    def reward(self, state, a: int) -> float:
        if state == ABSORB:
            return 0.0
        s, k = state
        return self.effective_reward(s, a, k)


def empty_arp(m: FiniteMdp, retain_entries: bool = True) -> ActionReplayProcess:
    return ActionReplayProcess(m, retain_entries)


def extend_arp(arp: ActionReplayProcess, tr: Transition, alpha: float) -> ActionReplayProcess:
    return arp.extend(tr, alpha)


def replay_arp(
    m: FiniteMdp,
    log: TrajectoryLog,
    sch: StepsizeSchedule,
    horizon: int | None = None,
    retain_entries: bool = True,
) -> ActionReplayProcess:
    """Build the ARP through ``horizon`` by repeated :func:`extend_arp`."""
    horizon = len(log) if horizon is None else horizon
    if not 0 <= horizon <= len(log):
        raise ValueError(f"horizon {horizon} exceeds log length {len(log)}")
    alphas = stepsize_sequence(log, sch).tolist()
    arp = ActionReplayProcess(m, retain_entries)
    for t, tr in enumerate(log.steps[:horizon]):
        arp.extend(tr, alphas[t])
    return arp


def build_arp(
    m: FiniteMdp,
    log: TrajectoryLog,
    sch: StepsizeSchedule,
    horizon: int,
    retain_entries: bool = True,
) -> ActionReplayProcess:
    """Evaluate the ARP straight from its product formulas, with no recursion over t.

    This is the slow reference against which :func:`extend_arp` is tested.
    """
    if not 0 <= horizon <= len(log):
        raise ValueError(f"horizon {horizon} exceeds log length {len(log)}")
    alphas_all = stepsize_sequence(log, sch)
    arp = ActionReplayProcess(m, retain_entries)
    arp.horizon = horizon
    for (s, a) in arp._times:
        times = log.occurrences[s][a]
        times = times[times < horizon]
        alphas = alphas_all[times]
        s_primes = log.next_states[times]
        key = (s, a)
        arp._times[key] = times.tolist()
        arp._alphas[key] = alphas.tolist()
        arp._s_primes[key] = s_primes.tolist()
        r = float(m.rewards[s, a])
        for n in range(1, len(times) + 1):
            probs, absorb = _from_definition(alphas[:n])
            arp._absorb_hist[key].append(absorb)
            arp._reward_hist[key].append(r * float(probs.sum()))
            dyn = np.zeros(m.n_states)
            np.add.at(dyn, s_primes[:n], probs)
            arp._dyn_hist[key].append(dyn)
            if arp._prob_hist is not None:
                arp._prob_hist[key].append(probs)
        arp._probs[key] = _from_definition(alphas)[0]
    return arp


@dataclass
class ArpValueLayers:
    """Optimal ARP action-values, ``values[k, s, a]`` for layers k = 0..horizon."""

    values: np.ndarray

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def layer(self, k: int) -> np.ndarray:
        return self.values[k]


def solve_arp_qstar(m: FiniteMdp, arp: ActionReplayProcess) -> ArpValueLayers:
    """Exact optimal action-values of the ARP by one bottom-up pass over layers.

    Layer k only references replay states at layers t' < k and the absorbing
    state, whose optimal value is 0, so

        q((s, k), a) = sum_j p_j * (r(s, a) + gamma * max_a' q((S'_{t'_j}, t'_j), a'))

    is evaluated directly from the layer-k entries for every pair.
    """
    horizon = arp.horizon
    n_s, n_a = m.shape
    values = np.zeros((horizon + 1, n_s, n_a))
    best = np.zeros((horizon + 1, n_s))
    for k in range(1, horizon + 1):
        for s in range(n_s):
            for a in range(n_a):
                times, probs, s_primes = arp.entries(s, a, k)
                if len(times) == 0:
                    continue
                targets = m.rewards[s, a] + m.gamma * best[times, s_primes]
                values[k, s, a] = float(np.sum(probs * targets))
        best[k] = values[k].max(axis=1)
    return ArpValueLayers(values)


def aggregate_dynamics(arp: ActionReplayProcess, layer: int) -> np.ndarray:
    """P_hat_layer(s' | s, a): replay probabilities pooled by successor state."""
    out = np.zeros((arp.n_states, arp.n_actions, arp.n_states))
    for s in range(arp.n_states):
        for a in range(arp.n_actions):
            out[s, a] = arp.pooled_dynamics(s, a, layer)
    return out


def aggregate_reward(arp: ActionReplayProcess, layer: int) -> np.ndarray:
    out = np.zeros((arp.n_states, arp.n_actions))
    for s in range(arp.n_states):
        for a in range(arp.n_actions):
            out[s, a] = arp.effective_reward(s, a, layer)
    return out


def absorb_layer(arp: ActionReplayProcess, layer: int) -> np.ndarray:
    out = np.zeros((arp.n_states, arp.n_actions))
    for s in range(arp.n_states):
        for a in range(arp.n_actions):
            out[s, a] = arp.absorb_mass(s, a, layer)
    return out


def escape_mass(
    arp: ActionReplayProcess, s: int, a: int, t_tilde: int, t: int
) -> tuple[float, float]:
    """Probability of replaying a visit older than ``t_tilde`` from (s, t), and its bound.

    Returns ``(mass, bound)`` with ``bound = exp(-sum of alpha over visits in [t_tilde, t))``.
    """
    if not 0 <= t_tilde <= t <= arp.horizon:
        raise ValueError(f"need 0 <= t_tilde <= t <= {arp.horizon}, got {t_tilde}, {t}")
    if not (0 <= s < arp.n_states and 0 <= a < arp.n_actions):
        raise IndexError(f"pair ({s}, {a}) out of range")
    times, probs, _ = arp.entries(s, a, t)
    old = times < t_tilde
    mass = float(np.sum(probs[old]))
    window = sum(al for tau, al in zip(arp._times[(s, a)], arp._alphas[(s, a)]) if t_tilde <= tau < t)
    return mass, math.exp(-window)


def arp_diagnostics(arp: ActionReplayProcess, m: FiniteMdp, layers) -> list[tuple]:
    """Rows ``(t, s, a, absorb_mass, r_hat, max_abs_p_gap)`` for each requested layer."""
    rows = []
    for t in layers:
        for s in range(m.n_states):
            for a in range(m.n_actions):
                gap = float(np.max(np.abs(arp.pooled_dynamics(s, a, t) - m.transitions[s, a])))
                rows.append((int(t), s, a, arp.absorb_mass(s, a, t), arp.effective_reward(s, a, t), gap))
    return rows
