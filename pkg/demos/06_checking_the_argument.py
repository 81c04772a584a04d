"""
Checking the convergence argument numerically
=============================================

Run the exact identities and pointwise inequalities behind the convergence
proof over a seeded ensemble of random instances, and print each outcome.
"""

from qreplay import verify
from qreplay.arp import replay_arp
from qreplay.rng import stream

ensemble = verify.make_ensemble(0, 10, max_horizon=300)
rng = stream(0, "demo-probes")

outcomes = []
for inst in ensemble:
    m, log, sch = inst.mdp, inst.log, inst.schedule
    q_star = verify.reference_qstar(m)
    outcomes += [
        verify.check_theorem3(m, log, sch, inst.horizon),
        verify.check_arp_equivalence(m, log, sch, inst.horizon),
        verify.check_mass_conservation(replay_arp(m, log, sch)),
        verify.check_contraction(m, 100, rng),
        verify.check_qstar_bound(m),
        verify.check_value_iteration(m),
        verify.check_lemma3(m, log, sch, 100, rng),
        verify.one_step_outcome(verify.check_lemma4(m, log, sch, q_star, 100, rng)),
    ]

# One line per check name, keeping the instance closest to violating it.
by_name = {}
for oc in outcomes:
    if oc.name not in by_name or oc.worst_violation - oc.tolerance > by_name[oc.name].worst_violation - by_name[oc.name].tolerance:
        by_name[oc.name] = oc
for name, oc in by_name.items():
    ok = all(o.passed for o in outcomes if o.name == name)
    print(f"{'PASS' if ok else 'FAIL'} {name:<28} worst {oc.worst_violation:+.3e} (tolerance {oc.tolerance:g})")
