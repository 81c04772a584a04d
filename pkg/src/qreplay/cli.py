"""Command-line front end.

    qreplay gen     --states 3 --actions 2 --gamma 0.9 --seed 1 --out mdp.json
    qreplay solve   --mdp mdp.json --tol 1e-8 --out solve.json
    qreplay qlearn  --mdp mdp.json --horizon 100000 --stepsize harmonic --out run/
    qreplay verify  --suite all --seed 0 --out report.json

Settings are layered: built-in defaults, then ``--config file.json``, then flags.
Exit codes: 0 success, 1 a verification check failed, 2 bad input or usage.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from qreplay import __version__
from qreplay import arp as arp_mod
from qreplay import io as qio
from qreplay import verify
from qreplay.mdp import ConvergenceError, MdpValidationError, greedy_policy, random_mdp, value_iteration
from qreplay.qlearning import StepsizeSchedule, rm_diagnostics, run_qlearning
from qreplay.rng import stream
from qreplay.trajectory import SamplerKind, generate

SUITES = ("theorem3", "limits", "bounds", "convergence", "all")

DEFAULTS = {
    "mdp": None,
    "out": None,
    "seed": 0,
    "gamma": 0.9,
    "states": 3,
    "actions": 2,
    "sparsity": 1.0,
    "reward_range": [-1.0, 1.0],
    "horizon": 10_000,
    "sampler": "round_robin",
    "stepsize": "harmonic",
    "checkpoint_every": 100,
    "tol": 1e-8,
    "suite": "all",
    "arp_diagnostics": False,
    # verify settings
    "ensemble_size": 20,
    "ensemble_horizon": 500,
    "probes": 1000,
    "chain_epsilon_fraction": 1.0,
    "limits_horizon": 20_000,
    "limits_r_rel_threshold": 0.1,
    "limits_p_threshold": 0.1,
    "limits_backslide": 0.02,
    "convergence_horizon": 100_000,
    "convergence_stepsize": "per_visit_polynomial(1,0.6)",
    "convergence_seeds": [0, 1, 2, 3, 4],
    "convergence_threshold": 0.05,
}


class ConfigError(ValueError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding the defaults")
    common.add_argument("--mdp", help="MDP JSON file (otherwise one is generated)")
    common.add_argument("--out", help="output file (output directory for qlearn)")
    common.add_argument("--seed", type=int, help="master seed, 64-bit unsigned")
    common.add_argument("--gamma", type=float)
    common.add_argument("--states", type=int)
    common.add_argument("--actions", type=int)
    common.add_argument("--sparsity", type=float)
    common.add_argument("--horizon", type=int)
    common.add_argument("--sampler", help="round_robin | uniform_iid | follow_with_restart(eps,restart)")
    common.add_argument("--stepsize", help="harmonic | constant(c) | global_polynomial(c,p) | per_visit_polynomial(c,p)")
    common.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    common.add_argument("--tol", type=float)

    parser = argparse.ArgumentParser(prog="qreplay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate a random MDP file")
    sub.add_parser("solve", parents=[common], help="solve an MDP by value iteration")
    ql = sub.add_parser("qlearn", parents=[common], help="run a Q-learning experiment")
    ql.add_argument("--arp-diagnostics", dest="arp_diagnostics", action="store_true", default=None,
                    help="also dump per-checkpoint ARP diagnostics")
    vf = sub.add_parser("verify", parents=[common], help="run verification suites")
    vf.add_argument("--suite", choices=SUITES)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(overrides) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(overrides)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if not 0 <= int(cfg["seed"]) < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if cfg["mdp"] is not None and not Path(cfg["mdp"]).is_file():
        raise ConfigError(f"MDP file {cfg['mdp']} does not exist")
    if cfg["horizon"] < 0:
        raise ConfigError("horizon must be nonnegative")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _metadata(cfg: dict) -> dict:
    return {
        "seed": cfg["seed"],
        "config_hash": config_hash(cfg),
        "config": cfg,
        "versions": {"qreplay": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }


def _require_out(cfg):
    if not cfg["out"]:
        raise ConfigError("--out is required")
    return Path(cfg["out"])


def _load_or_generate(cfg):
    if cfg["mdp"]:
        return qio.load_mdp(cfg["mdp"])
    lo, hi = cfg["reward_range"]
    return random_mdp(
        cfg["states"], cfg["actions"], cfg["gamma"], stream(cfg["seed"], "mdp-gen"),
        sparsity=cfg["sparsity"], reward_range=(lo, hi),
    )


def cmd_gen(cfg: dict) -> int:
    out = _require_out(cfg)
    if cfg["states"] < 1 or cfg["actions"] < 1:
        raise ConfigError("states and actions must be positive")
    m = _load_or_generate(dict(cfg, mdp=None))
    qio.save_mdp(out, m)
    return 0


def cmd_solve(cfg: dict) -> int:
    out = _require_out(cfg)
    m = _load_or_generate(cfg)
    rep = value_iteration(m, cfg["tol"])
    qio.write_json(out, {
        "q_star": rep.q_star,
        "iterations": rep.iterations,
        "residual": rep.residual,
        "error_bound": rep.error_bound,
        "tol": cfg["tol"],
        "greedy_policy": greedy_policy(rep.q_star),
    })
    return 0


def cmd_qlearn(cfg: dict) -> int:
    out = _require_out(cfg)
    sampler = SamplerKind.parse(cfg["sampler"])
    sch = StepsizeSchedule.parse(cfg["stepsize"])
    m = _load_or_generate(cfg)
    if cfg["checkpoint_every"] < 1:
        raise ConfigError("checkpoint-every must be positive")
    log = generate(m, sampler, cfg["horizon"], stream(cfg["seed"], "trajectory"))
    q_star = verify.reference_qstar(m)
    run = run_qlearning(m, log, sch, q_star=q_star, checkpoint_every=cfg["checkpoint_every"])
    diag = rm_diagnostics(log, sch)

    report = {
        "metadata": _metadata(cfg),
        "q_star": q_star,
        "final_table": run.final_table,
        "final_sup_error": float(np.max(np.abs(run.final_table - q_star))),
        "checkpoints": [{"t": cp.t, "sup_error": cp.sup_error} for cp in run.checkpoints],
        "rm_partial_sums": {"sum_alpha": run.sum_alpha, "sum_alpha_sq": run.sum_alpha_sq},
        "rm_flags": {"low_progress": diag.low_progress, "not_summable": diag.not_summable},
        "visit_counts": log.visit_counts,
    }
    qio.atomic_write(out / "trace.csv", qio.trace_csv(run.checkpoints))
    qio.atomic_write(out / "trajectory.csv", qio.trajectory_csv(log))
    if cfg["arp_diagnostics"]:
        arp = arp_mod.replay_arp(m, log, sch, retain_entries=False)
        layers = [cp.t for cp in run.checkpoints]
        qio.atomic_write(out / "arp.csv", qio.arp_csv(arp_mod.arp_diagnostics(arp, m, layers)))
    qio.write_json(out / "report.json", report)
    return 0


def _merge(outcomes: list[verify.CheckOutcome], label) -> list[verify.CheckOutcome]:
    """Collapse per-instance outcomes into one outcome per check name, keeping the worst."""
    merged: dict[str, verify.CheckOutcome] = {}
    for tag, oc in zip(label, outcomes):
        cur = merged.get(oc.name)
        if cur is None or oc.worst_violation - oc.tolerance > cur.worst_violation - cur.tolerance:
            merged[oc.name] = verify.CheckOutcome(
                oc.name, oc.passed, oc.worst_violation, f"{tag}: {oc.witness}", oc.kind, oc.tolerance,
                {"instances": len([o for o in outcomes if o.name == oc.name])},
            )
    for name, oc in merged.items():
        oc.passed = all(o.passed for o in outcomes if o.name == name)
    return list(merged.values())


def suite_theorem3(cfg) -> list[verify.CheckOutcome]:
    outcomes, tags = [], []
    for inst in verify.make_ensemble(cfg["seed"], cfg["ensemble_size"], max_horizon=cfg["ensemble_horizon"]):
        m, log, sch, h = inst.mdp, inst.log, inst.schedule, inst.horizon
        for oc in (
            verify.check_theorem3(m, log, sch, h),
            verify.check_arp_equivalence(m, log, sch, h),
            verify.check_mass_conservation(arp_mod.replay_arp(m, log, sch)),
        ):
            outcomes.append(oc)
            tags.append(f"instance seed {inst.seed}")
    return _merge(outcomes, tags)


def suite_bounds(cfg) -> list[verify.CheckOutcome]:
    instances = verify.make_ensemble(cfg["seed"], cfg["ensemble_size"], max_horizon=cfg["ensemble_horizon"])
    rng = stream(cfg["seed"], "checks")
    per = max(1, -(-cfg["probes"] // len(instances))) if instances else 0
    outcomes, tags = [], []
    for inst in instances:
        m, log, sch = inst.mdp, inst.log, inst.schedule
        q_star = verify.reference_qstar(m)
        arp = arp_mod.replay_arp(m, log, sch)
        eps = cfg["chain_epsilon_fraction"] * max(m.reward_norm, 1e-12) / (1.0 - m.gamma)
        for oc in (
            verify.check_contraction(m, per, rng),
            verify.check_qstar_bound(m),
            verify.check_value_iteration(m, cfg["tol"]),
            verify.check_lemma3(m, log, sch, per, rng, arp=arp),
            verify.one_step_outcome(verify.check_lemma4(m, log, sch, q_star, per, rng)),
            verify.check_bound_chain(m, log, sch, q_star, eps),
        ):
            outcomes.append(oc)
            tags.append(f"instance seed {inst.seed}")
    return _merge(outcomes, tags)


def suite_limits(cfg) -> list[verify.CheckOutcome]:
    m = random_mdp(2, 2, cfg["gamma"], stream(cfg["seed"], "limits-mdp"))
    log = generate(m, SamplerKind.round_robin(), cfg["limits_horizon"], stream(cfg["seed"], "limits-trajectory"))
    rows = verify.check_arp_limits(m, log, StepsizeSchedule.harmonic(), verify.geometric_times(len(log)))
    oc = verify.limits_outcome(
        rows,
        r_threshold=cfg["limits_r_rel_threshold"] * m.reward_norm,
        p_threshold=cfg["limits_p_threshold"],
        backslide_slack=cfg["limits_backslide"],
    )
    oc.details["rows"] = [list(r) for r in rows]
    return [oc]


def suite_convergence(cfg) -> list[verify.CheckOutcome]:
    m = _load_or_generate(cfg)
    return [verify.check_convergence(
        m,
        SamplerKind.parse(cfg["sampler"]),
        StepsizeSchedule.parse(cfg["convergence_stepsize"]),
        cfg["convergence_horizon"],
        cfg["convergence_seeds"],
        cfg["convergence_threshold"],
    )]


SUITE_RUNNERS = {
    "theorem3": suite_theorem3,
    "bounds": suite_bounds,
    "limits": suite_limits,
    "convergence": suite_convergence,
}


def cmd_verify(cfg: dict) -> int:
    out = _require_out(cfg)
    suite = cfg["suite"]
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; expected one of {SUITES}")
    # parse everything up front so bad specs fail before any work or output
    SamplerKind.parse(cfg["sampler"])
    StepsizeSchedule.parse(cfg["stepsize"])
    StepsizeSchedule.parse(cfg["convergence_stepsize"])
    if cfg["mdp"]:
        qio.load_mdp(cfg["mdp"])
    names = [s for s in SUITES if s != "all"] if suite == "all" else [suite]
    checks = []
    for name in names:
        for oc in SUITE_RUNNERS[name](cfg):
            d = oc.to_dict()
            d["suite"] = name
            checks.append(d)
    passed = all(c["passed"] for c in checks)
    qio.write_json(out, {"metadata": _metadata(cfg), "checks": checks, "passed": passed})
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} [{c['suite']}/{c['kind']}] {c['name']}: worst={c['worst_violation']:.3e} ({c['witness']})")
    return 0 if passed else 1


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "qlearn": cmd_qlearn, "verify": cmd_verify}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, MdpValidationError, ConvergenceError, ValueError, OSError) as exc:
        print(f"qreplay {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
