"""
Q-learning along a sampled trajectory
=====================================

Sample visits with three different strategies, run Q-learning from zero and
watch the sup-norm error and the per-pair stepsize sums.
"""

import numpy as np

from qreplay.mdp import random_mdp, value_iteration
from qreplay.qlearning import StepsizeSchedule, rm_diagnostics, run_qlearning
from qreplay.rng import stream
from qreplay.trajectory import SamplerKind, generate

m = random_mdp(3, 2, 0.7, stream(1, "mdp-gen"))
q_star = value_iteration(m, 1e-10).q_star
sch = StepsizeSchedule.per_visit_polynomial(1.0, 0.7)

# The successor is always drawn from P(. | s, a); samplers only decide which
# pair is visited next, and may jump anywhere.
for sampler in (SamplerKind.round_robin(), SamplerKind.uniform_iid(), SamplerKind.follow_with_restart(1.0, 0.05)):
    log = generate(m, sampler, 50_000, stream(1, "trajectory"))
    run = run_qlearning(m, log, sch, q_star=q_star, checkpoint_times=[10, 100, 1_000, 10_000, 50_000])
    trace = "  ".join(f"t={cp.t}: {cp.sup_error:.4f}" for cp in run.checkpoints)
    print(f"{sampler.describe():<32} {trace}")

# Robbins-Monro bookkeeping: sum of alpha keeps growing while sum of alpha^2 levels off.
diag = rm_diagnostics(log, sch)
print("\nper-pair sum alpha\n", np.round(diag.sum_alpha, 1))
print("per-pair sum alpha^2\n", np.round(diag.sum_alpha_sq, 3))
print("pairs flagged as low progress:", int(diag.low_progress.sum()))
