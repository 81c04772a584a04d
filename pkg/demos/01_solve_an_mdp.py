"""
Solving a small MDP
===================

Generate a seeded random MDP, solve it by value iteration and read off the
error certificate and the greedy policy.
"""

import numpy as np

from qreplay.mdp import bellman_apply, greedy_policy, random_mdp, sup_distance, theoretical_value_bound, value_iteration
from qreplay.rng import stream

# A 4-state, 2-action MDP. Each named stream is independent of the others, so
# adding draws elsewhere never shifts this instance.
m = random_mdp(4, 2, 0.9, stream(0, "mdp-gen"), sparsity=0.5)
print("transitions P[s, a, :]\n", np.round(m.transitions, 3))
print("rewards r[s, a]\n", np.round(m.rewards, 3))

# Value iteration stops once the certified distance to q* drops below tol.
rep = value_iteration(m, tol=1e-8)
print(f"\niterations {rep.iterations}, last residual {rep.residual:.2e}, certified error {rep.error_bound:.2e}")
print("q*\n", np.round(rep.q_star, 4))

# q* is a fixed point of the Bellman operator, up to the certificate.
print("||T q* - q*|| =", f"{sup_distance(bellman_apply(m, rep.q_star), rep.q_star):.2e}")

# Every value is bounded by max |r| / (1 - gamma).
print("max |q*| =", f"{np.abs(rep.q_star).max():.4f}", "<= bound", f"{theoretical_value_bound(m):.4f}")
print("greedy policy", greedy_policy(rep.q_star))
