"""The two-state, two-action counterexample MDP with two features."""

import numpy as np

from ..mdp import FeatureSet, MdpModel, StochasticPolicy

PHI = np.array([
    [0.25, -0.81],
    [0.88, -0.92],
    [1.00, -0.93],
    [0.03, -0.19],
])
TRANSITION = np.array([
    [0.90, 0.10],
    [0.94, 0.06],
    [0.00, 1.00],
    [0.44, 0.56],
])
REWARD = np.array([-0.63, 0.24, 0.50, 0.92])
# beta(1|1), beta(1|2); action 2 takes the remaining mass
BETA = np.array([
    [0.13, 0.87],
    [0.63, 0.37],
])
ETA = 0.01
GAMMA = 0.99


def mdp(gamma: float = GAMMA) -> MdpModel:
    return MdpModel(2, 2, gamma, TRANSITION, REWARD)


def features() -> FeatureSet:
    return FeatureSet(PHI)


def behavior() -> StochasticPolicy:
    return StochasticPolicy(BETA)
