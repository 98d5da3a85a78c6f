"""
Regularization strength and contraction
=======================================

Sweep the regularization weight and track the sup-norm of the regularized
projection, the contraction factor of the projected Bellman operator and the
conditioning of the inner objective.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from prq.harness import example1
from prq.projection import WeightDistribution, build_projector, convexity_constants
from prq.sampling import build_behavior_chain

mdp = example1.mdp(0.99)
features = example1.features()
d = WeightDistribution(build_behavior_chain(mdp, example1.behavior()).mu_inf)

etas = np.logspace(-4, 1.5, 60)
gn, gpn, kappa = [], [], []
for eta in etas:
    proj = build_projector(features, d, eta, mdp)
    gn.append(proj.contraction)
    gpn.append(proj.contraction_p)
    kappa.append(convexity_constants(features, d, eta).kappa)

first = etas[np.argmax(np.array(gpn) < 1)]
print(f"gamma ||Gamma_eta P||_inf first drops below 1 near eta = {first:.3g}")

fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
a.semilogx(etas, gn, label=r"$\gamma\|\Gamma_\eta\|_\infty$")
a.semilogx(etas, gpn, label=r"$\gamma\|\Gamma_\eta P\|_\infty$")
a.axhline(1.0, color="k", lw=0.8, ls="--")
a.set_xlabel(r"$\eta$")
a.legend()
b.loglog(etas, kappa)
b.set_xlabel(r"$\eta$")
b.set_ylabel(r"$\kappa = l_\eta/\mu_\eta$")
fig.tight_layout()
fig.savefig("contraction_vs_eta.svg")
print("wrote contraction_vs_eta.svg")
