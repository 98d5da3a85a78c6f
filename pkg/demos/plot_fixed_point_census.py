"""
Fixed points of the projected Bellman equation
==============================================

Enumerate every greedy policy of the two-state Example MDP and count the
solutions of the projected equation with and without regularization, then
compare regularized projected value iteration with the model-based RegQ
recursion at the same configuration.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from prq.harness import example1
from prq.planners import regq_model_based, rp_vi, solve_by_enumeration
from prq.projection import WeightDistribution, build_projector
from prq.sampling import build_behavior_chain

features = example1.features()

# census over discount factor and weighting
for gamma in (0.9, 0.95, 0.99):
    mdp = example1.mdp(gamma)
    mu = build_behavior_chain(mdp, example1.behavior()).mu_inf
    for label, d in (("stationary", WeightDistribution(mu)), ("uniform", WeightDistribution.uniform(4))):
        plain = solve_by_enumeration(mdp, features, d, 0.0).existence
        reg = solve_by_enumeration(mdp, features, d, 0.01).existence
        print(f"gamma={gamma:<5} D={label:<10} eta=0: {plain:<8} eta=0.01: {reg}")

# the configuration where regularization creates a unique solution
mdp = example1.mdp(0.99)
d = WeightDistribution(build_behavior_chain(mdp, example1.behavior()).mu_inf)
cert = solve_by_enumeration(mdp, features, d, 0.01)
theta_star = cert.theta_star
proj = build_projector(features, d, 0.01, mdp)
print("theta* =", theta_star)
print("gamma ||Gamma_eta||_inf   =", round(proj.contraction, 4))
print("gamma ||Gamma_eta P||_inf =", round(proj.contraction_p, 4))

rp = rp_vi(mdp, features, d, 0.01, max_iters=20000, tol=1e-300, theta_star=theta_star)
rq = regq_model_based(mdp, features, d, 0.01, 0.05, iters=100000, theta_star=theta_star)

fig, ax = plt.subplots(figsize=(6, 3.5))
ax.semilogy(rp.errors, label="RP-VI")
ax.semilogy(rq.errors, label="model-based RegQ", alpha=0.8)
ax.set_xlabel("iteration")
ax.set_ylabel(r"$\|\Phi(\theta_k-\theta^*)\|_\infty$")
ax.legend()
fig.tight_layout()
fig.savefig("fixed_point_census.svg")
print("wrote fixed_point_census.svg")
