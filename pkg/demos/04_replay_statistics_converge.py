"""
Replay statistics approach the true model
=========================================

The reward and successor distribution seen by the replay process at layer t
pool all earlier visits. With harmonic steps they are running averages, so
they settle on r and P as visits accumulate.
"""

from qreplay.mdp import random_mdp
from qreplay.qlearning import StepsizeSchedule
from qreplay.rng import stream
from qreplay.trajectory import SamplerKind, generate
from qreplay.verify import check_arp_limits, geometric_times

m = random_mdp(2, 2, 0.9, stream(0, "limits-mdp"))
log = generate(m, SamplerKind.round_robin(), 20_000, stream(0, "limits-trajectory"))
rows = check_arp_limits(m, log, StepsizeSchedule.harmonic(), geometric_times(len(log)))

print(f"{'t':>6}  {'||r_hat - r||':>14}  {'max |P_hat - P|':>16}")
for t, r_gap, p_gap in rows:
    print(f"{t:>6}  {r_gap:>14.3e}  {p_gap:>16.4f}")

# A constant stepsize keeps forgetting old visits, so the dynamics gap stalls.
rows = check_arp_limits(m, log, StepsizeSchedule.constant(0.1), [len(log)])
print(f"\nconstant(0.1) at t={len(log)}: max |P_hat - P| = {rows[0][2]:.4f}")
