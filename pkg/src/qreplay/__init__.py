"""Tabular Q-learning on finite MDPs with its action-replay process.

Modules: :mod:`qreplay.mdp` (model, Bellman operator, value iteration),
:mod:`qreplay.trajectory` (samplers), :mod:`qreplay.qlearning` (stepsizes and
iterates), :mod:`qreplay.arp` (action-replay process), :mod:`qreplay.verify`
(executable checks) and :mod:`qreplay.cli`.
"""

__version__ = "0.1.0"
