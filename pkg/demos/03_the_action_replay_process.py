"""
The action-replay process
=========================

Build the layered replay MDP from a short log, inspect where a layered state
can jump, and confirm that its optimal values reproduce the Q-learning iterates.
"""

import numpy as np

from qreplay.arp import ABSORB, replay_arp, solve_arp_qstar
from qreplay.mdp import random_mdp
from qreplay.qlearning import StepsizeSchedule, run_qlearning
from qreplay.rng import stream
from qreplay.trajectory import SamplerKind, generate

m = random_mdp(2, 2, 0.8, stream(2, "mdp-gen"))
log = generate(m, SamplerKind.uniform_iid(), 12, stream(2, "trajectory"))
sch = StepsizeSchedule.harmonic()
print("log (t, s, a, s')")
for t, tr in enumerate(log.steps):
    print(" ", t, tuple(tr))

# From (s, k) under a, the process replays an earlier visit t' < k of (s, a),
# landing in (S'_{t'}, t'), or falls into the absorbing state.
arp = replay_arp(m, log, sch)
s, a = int(log.states[-1]), int(log.actions[-1])
print(f"\nkernel of ({s}, {arp.horizon}) under action {a}:")
for succ, p in arp.kernel((s, arp.horizon), a).items():
    label = "absorb" if succ == ABSORB else f"(s'={succ[0]}, layer {succ[1]})"
    print(f"  {label:<22} {p:.4f}")

# Backward induction over layers gives the exact optimal values per layer.
layers = solve_arp_qstar(m, arp)
run = run_qlearning(m, log, sch, checkpoint_every=1, checkpoint_times=[0])
gap = max(np.abs(layers.layer(cp.t) - cp.table).max() for cp in run.checkpoints)
print(f"\nmax |replay value - Q_t| over all layers: {gap:.2e}")
