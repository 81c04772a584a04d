"""
How the stepsize sets the pace
==============================

Harmonic steps 1/n satisfy the Robbins-Monro conditions, yet at discount 0.9
the sup error only shrinks like t^-(1 - gamma). A per-visit step 1/n^0.6
forgets the zero initialization much faster on the same samples.
"""

import numpy as np

from qreplay.mdp import random_mdp, value_iteration
from qreplay.qlearning import StepsizeSchedule, run_qlearning
from qreplay.rng import stream
from qreplay.trajectory import SamplerKind, generate

m = random_mdp(3, 2, 0.9, stream(0, "mdp-gen"))
q_star = value_iteration(m, 1e-10).q_star
log = generate(m, SamplerKind.round_robin(), 10**6, stream(0, "trajectory"))
times = [10**k for k in range(2, 7)]

finals = {}
for sch in (StepsizeSchedule.harmonic(), StepsizeSchedule.per_visit_polynomial(1.0, 0.6)):
    errs = [cp.sup_error for cp in run_qlearning(m, log, sch, q_star=q_star, checkpoint_times=times).checkpoints]
    finals[sch] = errs[-1]
    slopes = np.diff(np.log10(errs))
    print(sch.describe())
    print("   error per decade:", "  ".join(f"{e:.4f}" for e in errs))
    print("   log-log slope:   ", "  ".join(f"{s:+.3f}" for s in slopes))

# Extrapolating the harmonic rate to a 0.05 target.
needed = 10**6 * (finals[StepsizeSchedule.harmonic()] / 0.05) ** (1 / (1 - m.gamma))
print(f"\nharmonic steps would need about {needed:.1e} transitions to reach 0.05")
