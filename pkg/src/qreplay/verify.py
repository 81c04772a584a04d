"""Executable checks of the convergence argument on seeded random instances.

Exact checks (identities and inequalities that must hold on every instance up to
floating-point slack) are reported separately from statistical ones (limits
that only hold eventually, judged against frozen thresholds).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from qreplay import arp as arp_mod
from qreplay.mdp import (
    FiniteMdp,
    bellman_apply,
    random_mdp,
    sup_distance,
    theoretical_value_bound,
    value_iteration,
)
from qreplay.qlearning import QRunReport, StepsizeSchedule, run_qlearning, stepsize_sequence
from qreplay.rng import stream
from qreplay.trajectory import SamplerKind, TrajectoryLog, generate

EXACT = "exact"
STATISTICAL = "statistical"
REFERENCE_TOL = 1e-10


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    worst_violation: float
    witness: str
    kind: str = EXACT
    tolerance: float = 0.0
    details: dict = field(default_factory=dict)

    @classmethod
    def judge(cls, name, worst, witness, tolerance, kind=EXACT, **details) -> CheckOutcome:
        return cls(name, bool(worst <= tolerance), float(worst), witness, kind, tolerance, details)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BoundBreakdown:
    """The four summands bounding |Q_t(s, a) - q*(s, a)| at one probe point."""

    s: int
    a: int
    t_tilde: int
    t: int
    lhs: float
    contraction_term: float
    reward_gap_term: float
    dynamics_gap_term: float
    escape_term: float

    @property
    def total(self) -> float:
        return self.contraction_term + self.reward_gap_term + self.dynamics_gap_term + self.escape_term

    @property
    def margin(self) -> float:
        return self.lhs - self.total


def reference_qstar(m: FiniteMdp) -> np.ndarray:
    return value_iteration(m, REFERENCE_TOL).q_star


# -- Bellman operator -------------------------------------------------------------

def check_contraction(m: FiniteMdp, trials: int, rng: np.random.Generator, tol: float = 1e-12) -> CheckOutcome:
    """d(Tq1, Tq2) <= gamma * d(q1, q2) on random table pairs.

    Half the pairs are independent draws, half are small perturbations of one
    another so the inequality is also probed near equality.
    """
    scale = max(1.0, 2.0 * theoretical_value_bound(m))
    worst, witness = -math.inf, "no trials"
    for i in range(trials):
        q1 = rng.uniform(-scale, scale, size=m.shape)
        if i % 2:
            q2 = q1 + rng.uniform(-1e-3, 1e-3, size=m.shape)
        else:
            q2 = rng.uniform(-scale, scale, size=m.shape)
        lhs = sup_distance(bellman_apply(m, q1), bellman_apply(m, q2))
        rhs = m.gamma * sup_distance(q1, q2)
        if lhs - rhs > worst:
            worst, witness = lhs - rhs, f"trial {i}: d(Tq1,Tq2)={lhs:.6g}, gamma*d(q1,q2)={rhs:.6g}"
    if trials == 0:
        worst = 0.0
    return CheckOutcome.judge("contraction", worst, witness, tol)


def check_qstar_bound(m: FiniteMdp, tol: float = 1e-9) -> CheckOutcome:
    q = reference_qstar(m)
    norm = float(np.max(np.abs(q)))
    bound = theoretical_value_bound(m)
    return CheckOutcome.judge("qstar_bound", norm - bound, f"||q*||={norm:.17g}, bound={bound:.17g}", tol)


def check_value_iteration(m: FiniteMdp, tol: float = 1e-8, slack: float = 1e-12) -> CheckOutcome:
    """The value-iteration certificate, cross-checked two independent ways.

    1. ``error_bound <= tol`` as promised.
    2. Ten further Bellman applications shrink the residual by at least gamma**10.
    3. The distance to a far tighter solve stays within ``error_bound``.
    """
    rep = value_iteration(m, tol)
    q = rep.q_star
    res0 = sup_distance(bellman_apply(m, q), q)
    q10 = q
    for _ in range(10):
        q10 = bellman_apply(m, q10)
    res10 = sup_distance(bellman_apply(m, q10), q10)
    tight = value_iteration(m, min(tol * 1e-4, 1e-12)).q_star
    dist = sup_distance(q, tight)
    margins = {
        "certificate": rep.error_bound - tol,
        "residual_decay": res10 - m.gamma**10 * res0,
        "distance_to_tight_solve": dist - rep.error_bound - 1e-4 * tol,
    }
    key = max(margins, key=margins.get)
    witness = f"{key}: iterations={rep.iterations}, residual={rep.residual:.3e}, bound={rep.error_bound:.3e}"
    return CheckOutcome.judge("value_iteration_certificate", margins[key], witness, slack, **margins)


# -- action-replay identities --------------------------------------------------------

def check_theorem3(
    m: FiniteMdp, log: TrajectoryLog, sch: StepsizeSchedule, horizon: int, tol: float = 1e-9
) -> CheckOutcome:
    """ARP optimal values at layer t equal the Q-learning iterate Q_t, for every t."""
    sub = log.prefix(horizon)
    layers = arp_mod.solve_arp_qstar(m, arp_mod.replay_arp(m, sub, sch))
    run = run_qlearning(m, sub, sch, checkpoint_every=1, checkpoint_times=[0])
    q_tables = np.stack([cp.table for cp in run.checkpoints])
    diff = np.abs(layers.values - q_tables)
    t, s, a = np.unravel_index(int(np.argmax(diff)), diff.shape)
    worst = float(diff[t, s, a])
    return CheckOutcome.judge(
        "replay_identity", worst, f"(s={s}, a={a}, t={t}) of horizon {horizon}", tol
    )


def check_arp_equivalence(
    m: FiniteMdp, log: TrajectoryLog, sch: StepsizeSchedule, horizon: int, tol: float = 1e-12
) -> CheckOutcome:
    """Incremental ARP (one extend per step) against the closed-form construction.

    The incremental ARP is compared with the reference at every prefix length
    before the next step is applied.
    """
    oracle = arp_mod.build_arp(m, log, sch, horizon)
    alphas = stepsize_sequence(log, sch).tolist()
    inc = arp_mod.empty_arp(m)
    worst, witness = 0.0, "horizon 0"
    for k in range(horizon + 1):
        for s in range(m.n_states):
            for a in range(m.n_actions):
                t_i, p_i, sp_i = inc.entries(s, a)
                t_o, p_o, sp_o = oracle.entries(s, a, k)
                if not (np.array_equal(t_i, t_o) and np.array_equal(sp_i, sp_o)):
                    return CheckOutcome.judge(
                        "arp_equivalence", math.inf, f"entry support differs at (s={s}, a={a}, k={k})", tol
                    )
                gaps = [
                    float(np.max(np.abs(p_i - p_o))) if len(p_i) else 0.0,
                    abs(inc.absorb_mass(s, a) - oracle.absorb_mass(s, a, k)),
                    abs(inc.effective_reward(s, a) - oracle.effective_reward(s, a, k)),
                    float(np.max(np.abs(inc.pooled_dynamics(s, a) - oracle.pooled_dynamics(s, a, k)))),
                ]
                if max(gaps) > worst:
                    worst, witness = max(gaps), f"(s={s}, a={a}, k={k})"
        if k < horizon:
            inc.extend(log[k], alphas[k])
    return CheckOutcome.judge("arp_equivalence", worst, witness, tol)


def check_mass_conservation(arp: arp_mod.ActionReplayProcess, tol: float = 1e-12) -> CheckOutcome:
    """absorb + sum of entry probabilities = 1 (and the same for pooled rows) at every layer."""
    worst, witness = 0.0, "empty"
    for k in range(arp.horizon + 1):
        for s in range(arp.n_states):
            for a in range(arp.n_actions):
                _, probs, _ = arp.entries(s, a, k)
                absorb = arp.absorb_mass(s, a, k)
                gap = max(
                    abs(absorb + float(np.sum(probs)) - 1.0),
                    abs(absorb + float(np.sum(arp.pooled_dynamics(s, a, k))) - 1.0),
                )
                if gap > worst:
                    worst, witness = gap, f"(s={s}, a={a}, k={k})"
    return CheckOutcome.judge("mass_conservation", worst, witness, tol)


# -- limits ------------------------------------------------------------------------

def check_arp_limits(m: FiniteMdp, log: TrajectoryLog, sch: StepsizeSchedule, checkpoints) -> list[tuple]:
    """(t, ||r_hat_t - r||, max |P_hat_t - P|) at each checkpoint layer."""
    arp = arp_mod.replay_arp(m, log, sch, retain_entries=False)
    rows = []
    for t in checkpoints:
        r_gap = float(np.max(np.abs(arp_mod.aggregate_reward(arp, t) - m.rewards)))
        p_gap = float(np.max(np.abs(arp_mod.aggregate_dynamics(arp, t) - m.transitions)))
        rows.append((int(t), r_gap, p_gap))
    return rows


def limits_outcome(
    rows,
    r_threshold: float,
    p_threshold: float,
    backslide_slack: float | None = 0.02,
    burn_in: float = 0.25,
) -> CheckOutcome:
    """Judge a gap sequence: final gaps under threshold and, after the first
    ``burn_in`` fraction of the run, no rise of more than ``backslide_slack``
    between consecutive checkpoints."""
    if not rows:
        return CheckOutcome.judge("arp_limits", math.inf, "no checkpoints", 0.0, STATISTICAL)
    t_end, r_end, p_end = rows[-1]
    margins = {"final_r_gap": r_end - r_threshold, "final_p_gap": p_end - p_threshold}
    if backslide_slack is not None:
        late = [row for row in rows if row[0] >= burn_in * t_end]
        rises = [0.0]
        for (_, r0, p0), (_, r1, p1) in zip(late, late[1:]):
            rises.extend([r1 - r0, p1 - p0])
        margins["backslide"] = max(rises) - backslide_slack
    key = max(margins, key=margins.get)
    witness = f"{key}; final t={t_end}: r_gap={r_end:.4g}, p_gap={p_end:.4g}"
    return CheckOutcome.judge("arp_limits", margins[key], witness, 0.0, STATISTICAL, **margins)


# -- pointwise inequalities ---------------------------------------------------------

def check_lemma3(
    m: FiniteMdp,
    log: TrajectoryLog,
    sch: StepsizeSchedule,
    samples: int,
    rng: np.random.Generator,
    tol: float = 1e-9,
    arp: arp_mod.ActionReplayProcess | None = None,
) -> CheckOutcome:
    """Escape mass never exceeds exp(-sum of stepsizes in the window)."""
    arp = arp if arp is not None else arp_mod.replay_arp(m, log, sch)
    worst, witness = -math.inf, "no samples"
    for _ in range(samples):
        s = int(rng.integers(m.n_states))
        a = int(rng.integers(m.n_actions))
        t = int(rng.integers(arp.horizon + 1))
        t_tilde = int(rng.integers(t + 1))
        mass, bound = arp_mod.escape_mass(arp, s, a, t_tilde, t)
        if mass - bound > worst:
            worst, witness = mass - bound, f"(s={s}, a={a}, t~={t_tilde}, t={t}): {mass:.6g} vs {bound:.6g}"
    if samples == 0:
        worst = 0.0
    return CheckOutcome.judge("escape_bound", worst, witness, tol)


def snapshot_run(m: FiniteMdp, log: TrajectoryLog, sch: StepsizeSchedule, q_star: np.ndarray) -> QRunReport:
    """Q-learning run with the snapshots the one-step bound probe needs.

    Every step is snapshotted up to horizon 1000; beyond that roughly 1000
    evenly spaced snapshots are kept and the per-step sup error is recorded.
    """
    horizon = len(log)
    cadence = 1 if horizon <= 1000 else math.ceil(horizon / 1000)
    return run_qlearning(
        m, log, sch, q_star=q_star, checkpoint_every=cadence, checkpoint_times=[0], record_errors=True
    )


def check_lemma4(
    m: FiniteMdp,
    log: TrajectoryLog,
    sch: StepsizeSchedule,
    q_star: np.ndarray,
    samples: int,
    rng: np.random.Generator,
    run: QRunReport | None = None,
    arp: arp_mod.ActionReplayProcess | None = None,
) -> list[BoundBreakdown]:
    """Evaluate the one-step error bound at random (s, a, t_tilde <= t).

    ``t`` is drawn from the snapshot times of ``run``. The max over
    t' in [t_tilde, t) uses the recorded error trace when present and the
    snapshots otherwise, in which case every t' must have one.
    """
    run = run if run is not None else snapshot_run(m, log, sch, q_star)
    arp = arp if arp is not None else arp_mod.replay_arp(m, log, sch, retain_entries=False)
    snapshots = {cp.t: cp.table for cp in run.checkpoints}
    times = sorted(snapshots)
    if not times:
        raise KeyError("run has no snapshots")
    q_star = np.asarray(q_star)
    gamma = m.gamma
    scale = gamma * m.reward_norm / (1.0 - gamma)
    n_s = m.n_states

    def err(t):
        if run.error_trace is not None:
            return float(run.error_trace[t])
        if t not in snapshots:
            raise KeyError(f"missing snapshot at t'={t}")
        return sup_distance(snapshots[t], q_star)

    out = []
    for _ in range(samples):
        t = times[int(rng.integers(len(times)))]
        t_tilde = int(rng.integers(t + 1))
        s = int(rng.integers(n_s))
        a = int(rng.integers(m.n_actions))
        window = max((err(tp) for tp in range(t_tilde, t)), default=0.0)
        r_gap = float(np.max(np.abs(arp_mod.aggregate_reward(arp, t) - m.rewards)))
        p_gap = float(np.max(np.abs(arp_mod.aggregate_dynamics(arp, t) - m.transitions)))
        visits = arp.visit_times(s, a)
        alphas = arp.stepsizes(s, a)
        in_window = (visits >= t_tilde) & (visits < t)
        exponent = float(np.sum(alphas[in_window]))
        out.append(
            BoundBreakdown(
                s=s, a=a, t_tilde=t_tilde, t=t,
                lhs=abs(float(snapshots[t][s, a]) - float(q_star[s, a])),
                contraction_term=gamma * window,
                reward_gap_term=r_gap,
                dynamics_gap_term=scale * n_s * p_gap,
                escape_term=scale * 2.0 * math.exp(-exponent),
            )
        )
    return out


def one_step_outcome(breakdowns: list[BoundBreakdown], tol: float = 1e-9) -> CheckOutcome:
    if not breakdowns:
        return CheckOutcome.judge("one_step_bound", 0.0, "no samples", tol)
    worst = max(breakdowns, key=lambda b: b.margin)
    witness = (
        f"(s={worst.s}, a={worst.a}, t~={worst.t_tilde}, t={worst.t}): "
        f"|Q-q*|={worst.lhs:.6g} vs bound {worst.total:.6g}"
    )
    return CheckOutcome.judge("one_step_bound", worst.margin, witness, tol)


# -- the iterated contraction chain ----------------------------------------------------

def chain_targets(m: FiniteMdp, epsilon: float) -> dict:
    """Thresholds that make the final error at most ``epsilon``.

    Returns the number of contraction rounds ``k`` (gamma**(k+1) <= eps(1-g)/(8R)),
    the reward-gap and dynamics-gap targets, and the per-window escape target.
    """
    gamma, big_r, n_s = m.gamma, m.reward_norm, m.n_states
    if big_r == 0.0:
        return {"k": 0, "reward": math.inf, "dynamics": math.inf, "escape": math.inf}
    limit = epsilon * (1.0 - gamma) / (8.0 * big_r)
    k = 1
    while gamma ** (k + 1) > limit:
        k += 1
    if gamma == 0.0:
        dynamics = escape = math.inf
    else:
        dynamics = epsilon * (1.0 - gamma) ** 2 / (4.0 * gamma * n_s * big_r)
        escape = epsilon * (1.0 - gamma) ** 2 / (8.0 * gamma * big_r)
    return {"k": k, "reward": epsilon * (1.0 - gamma) / 4.0, "dynamics": dynamics, "escape": escape}


def check_bound_chain(
    m: FiniteMdp,
    log: TrajectoryLog,
    sch: StepsizeSchedule,
    q_star: np.ndarray,
    epsilon: float,
    tol: float = 1e-9,
) -> CheckOutcome:
    """Locate t_0 <= t_1 <= ... <= t_k along the run and check ||Q_t - q*|| <= epsilon for t >= t_k.

    t_0 is the first layer from which the reward and dynamics gaps stay under
    their targets through the end of the log; each t_i is the first layer at
    which every pair has accumulated enough stepsize since t_{i-1}. If the chain
    does not fit inside the log the check passes vacuously and says so.
    """
    targets = chain_targets(m, epsilon)
    horizon = len(log)
    arp = arp_mod.replay_arp(m, log, sch, retain_entries=False)
    run = run_qlearning(m, log, sch, q_star=q_star, record_errors=True)

    ok = np.empty(horizon + 1, dtype=bool)
    for t in range(horizon + 1):
        r_gap = float(np.max(np.abs(arp_mod.aggregate_reward(arp, t) - m.rewards)))
        p_gap = float(np.max(np.abs(arp_mod.aggregate_dynamics(arp, t) - m.transitions)))
        ok[t] = r_gap <= targets["reward"] and p_gap <= targets["dynamics"]
    bad = np.flatnonzero(~ok)
    t0 = int(bad[-1]) + 1 if len(bad) else 0

    alphas = stepsize_sequence(log, sch)
    pair = log.states * m.n_actions + log.actions
    need = -math.log(targets["escape"]) if targets["escape"] < 1.0 else 0.0
    chain = [t0]
    for _ in range(targets["k"]):
        start = chain[-1]
        if start > horizon:
            break
        acc = np.zeros(m.n_states * m.n_actions)
        t_next = start if need == 0.0 else None
        for t in range(start, horizon):
            if t_next is not None:
                break
            acc[pair[t]] += alphas[t]
            if acc.min() >= need:
                t_next = t + 1
        chain.append(horizon + 1 if t_next is None else t_next)

    t_k = chain[-1] if len(chain) == targets["k"] + 1 else horizon + 1
    if t_k > horizon:
        return CheckOutcome.judge(
            "bound_chain", -math.inf, f"vacuous: chain {chain} not realized within horizon {horizon}",
            tol, chain=chain, vacuous=True,
        )
    tail = run.error_trace[t_k:]
    worst_t = t_k + int(np.argmax(tail))
    return CheckOutcome.judge(
        "bound_chain", float(tail.max()) - epsilon,
        f"chain {chain}; max error {tail.max():.6g} at t={worst_t} vs epsilon {epsilon}",
        tol, chain=chain, vacuous=False,
    )


# -- convergence ----------------------------------------------------------------------

def geometric_times(horizon: int, ratio: float = 2.0) -> list[int]:
    """1, ratio, ratio**2, ... below ``horizon``, then ``horizon`` itself."""
    times, t = [], 1.0
    while t < horizon:
        times.append(int(t))
        t *= ratio
    times.append(horizon)
    return sorted(set(times))


def check_convergence(
    m: FiniteMdp,
    sampler: SamplerKind,
    sch: StepsizeSchedule,
    horizon: int,
    seeds,
    threshold: float,
) -> CheckOutcome:
    """Run Q-learning once per seed and judge the sup error against ``q*``.

    A seed passes when its final error is at most ``threshold`` and, at the
    geometric checkpoints, the error never climbs back above ``2 * threshold``
    once it has first dropped below it.
    """
    q_star = reference_qstar(m)
    times = geometric_times(horizon)
    finals, worst, witness = {}, -math.inf, ""
    for seed in seeds:
        log = generate(m, sampler, horizon, stream(seed, "trajectory"))
        run = run_qlearning(m, log, sch, q_star=q_star, checkpoint_times=times)
        errors = [cp.sup_error for cp in run.checkpoints]
        final = errors[-1]
        finals[str(seed)] = final
        below = [i for i, e in enumerate(errors) if e <= 2.0 * threshold]
        settled = max(errors[below[0]:]) - 2.0 * threshold if below else min(errors) - 2.0 * threshold
        margin = max(final - threshold, settled)
        if margin > worst:
            worst, witness = margin, f"seed {seed}: final sup error {final:.6g}"
    return CheckOutcome.judge(
        "convergence", worst, witness, 0.0, STATISTICAL, final_errors=finals, threshold=threshold
    )


# -- ensembles ----------------------------------------------------------------------

@dataclass
class Instance:
    seed: int
    mdp: FiniteMdp
    log: TrajectoryLog
    schedule: StepsizeSchedule
    sampler: SamplerKind

    @property
    def horizon(self) -> int:
        return len(self.log)


ENSEMBLE_GAMMAS = (0.0, 0.5, 0.9)
ENSEMBLE_SAMPLERS = (
    SamplerKind.round_robin(),
    SamplerKind.uniform_iid(),
    SamplerKind.follow_with_restart(),
    SamplerKind.follow_with_restart(0.3, 0.1),
)
ENSEMBLE_SCHEDULES = (
    StepsizeSchedule.harmonic(),
    StepsizeSchedule.per_visit_polynomial(1.0, 0.7),
    StepsizeSchedule.global_polynomial(1.0, 0.6),
    StepsizeSchedule.constant(0.3),
    StepsizeSchedule.constant(1.0),
)


def make_instance(
    seed: int,
    max_states: int = 5,
    max_actions: int = 3,
    max_horizon: int = 500,
    gamma: float | None = None,
    sampler: SamplerKind | None = None,
    schedule: StepsizeSchedule | None = None,
) -> Instance:
    """Deterministic random instance; all randomness is keyed by ``seed``.

    Discount, sampler and schedule are drawn too unless given explicitly.
    """
    rng = stream(seed, "ensemble")
    n_s = int(rng.integers(1, max_states + 1))
    n_a = int(rng.integers(1, max_actions + 1))
    sparsity = float(rng.choice([0.0, 0.5, 1.0]))
    horizon = int(rng.integers(max_horizon // 5, max_horizon + 1))
    if gamma is None:
        gamma = ENSEMBLE_GAMMAS[int(rng.integers(len(ENSEMBLE_GAMMAS)))]
    if sampler is None:
        sampler = ENSEMBLE_SAMPLERS[int(rng.integers(len(ENSEMBLE_SAMPLERS)))]
    if schedule is None:
        schedule = ENSEMBLE_SCHEDULES[int(rng.integers(len(ENSEMBLE_SCHEDULES)))]
    if sampler.kind == "follow_with_restart" and sampler.epsilon < 1.0 and sampler.table is None:
        sampler = SamplerKind.follow_with_restart(
            sampler.epsilon, sampler.restart_prob, table=rng.normal(size=(n_s, n_a))
        )
    m = random_mdp(n_s, n_a, gamma, stream(seed, "mdp-gen"), sparsity=sparsity, reward_range=(-2.0, 2.0))
    log = generate(m, sampler, horizon, stream(seed, "trajectory"))
    return Instance(seed, m, log, schedule, sampler)


def make_ensemble(master_seed: int, count: int, **kwargs) -> list[Instance]:
    """``count`` instances cycling through the discounts, samplers and schedules."""
    seeds = np.random.SeedSequence(master_seed).generate_state(count, dtype=np.uint64)
    return [
        make_instance(
            int(seed),
            gamma=ENSEMBLE_GAMMAS[i % len(ENSEMBLE_GAMMAS)],
            sampler=ENSEMBLE_SAMPLERS[i % len(ENSEMBLE_SAMPLERS)],
            schedule=ENSEMBLE_SCHEDULES[i % len(ENSEMBLE_SCHEDULES)],
            **kwargs,
        )
        for i, seed in enumerate(seeds)
    ]
