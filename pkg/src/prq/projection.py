"""Weighting distributions, the regularized projection and the convexity
constants of the regularized inner-loop objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import ConditioningError, NumericError, ValidationError
from .mdp import ROW_SUM_TOL, FeatureSet, MdpModel

COND_LIMIT = 1e12


def inf_norm(A) -> float:
    """Max absolute row sum (vector: max absolute entry)."""
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        return float(np.max(np.abs(A), initial=0.0))
    return float(np.max(np.sum(np.abs(A), axis=1), initial=0.0))


@dataclass(frozen=True)
class WeightDistribution:
    """Distribution d over state-action rows; D = diag(d)."""

    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 1 or not np.all(np.isfinite(d)):
            raise ValidationError("weight distribution must be a finite vector")
        if np.any(d < 0) or abs(d.sum() - 1.0) > ROW_SUM_TOL:
            raise ValidationError("weight distribution must lie on the simplex")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @classmethod
    def uniform(cls, n: int) -> "WeightDistribution":
        return cls(np.full(n, 1.0 / n))

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.d)


def gram(features: FeatureSet, d: WeightDistribution) -> np.ndarray:
    """Phi^T D Phi, symmetrised."""
    phi = features.phi
    if d.d.shape != (phi.shape[0],):
        raise ValidationError("weight distribution length does not match feature rows")
    G = phi.T @ (d.d[:, None] * phi)
    return 0.5 * (G + G.T)


def _factor(features: FeatureSet, d: WeightDistribution, eta: float):
    """Cholesky factor of Phi^T D Phi + eta I, guarded by condition number."""
    if eta < 0 or not np.isfinite(eta):
        raise ValidationError(f"eta must be a finite nonnegative number, got {eta}")
    M = gram(features, d) + eta * np.eye(features.h)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ConditioningError(
            f"Phi^T D Phi + eta I is singular or ill-conditioned at eta={eta} (cond={cond:.3g})")
    try:
        return linalg.cho_factor(M, lower=True), M
    except linalg.LinAlgError as exc:
        raise ConditioningError(f"Phi^T D Phi + eta I not positive definite at eta={eta}") from exc


@dataclass(frozen=True)
class RegularizedProjector:
    """Gamma_eta = Phi (Phi^T D Phi + eta I)^{-1} Phi^T D with cached norms.

    ``contraction_p`` is ``gamma * ||Gamma_eta P||_inf`` for the MDP the
    projector was built against.
    """

    eta: float
    gamma: float
    gamma_eta: np.ndarray
    core_inverse: np.ndarray
    inf_norm: float
    contraction_p: float
    features: FeatureSet
    weights: WeightDistribution

    @property
    def contraction(self) -> float:
        """gamma * ||Gamma_eta||_inf."""
        return self.gamma * self.inf_norm

    def solve(self, rhs) -> np.ndarray:
        """(Phi^T D Phi + eta I)^{-1} rhs."""
        return self.core_inverse @ np.asarray(rhs, dtype=float)

    def target_parameter(self, y) -> np.ndarray:
        """Minimiser over theta of 0.5||y - Phi theta||_D^2 + 0.5 eta ||theta||^2."""
        phi = self.features.phi
        return self.core_inverse @ (phi.T @ (self.weights.d * np.asarray(y, dtype=float)))


def build_projector(features: FeatureSet, d: WeightDistribution, eta: float,
                    mdp: MdpModel) -> RegularizedProjector:
    eta = float(eta)
    (c, low), _ = _factor(features, d, eta)
    h = features.h
    core_inverse = linalg.cho_solve((c, low), np.eye(h))
    core_inverse = 0.5 * (core_inverse + core_inverse.T)
    rhs = features.phi.T * d.d[None, :]
    gamma_eta = features.phi @ linalg.cho_solve((c, low), rhs)
    if not np.all(np.isfinite(gamma_eta)):
        raise NumericError(f"non-finite regularized projection at eta={eta}")
    if mdp.n_pairs != features.n_rows:
        raise ValidationError("features and MDP disagree on |S||A|")
    for arr in (core_inverse, gamma_eta):
        arr.setflags(write=False)
    return RegularizedProjector(
        eta=eta,
        gamma=mdp.gamma,
        gamma_eta=gamma_eta,
        core_inverse=core_inverse,
        inf_norm=inf_norm(gamma_eta),
        contraction_p=mdp.gamma * inf_norm(gamma_eta @ mdp.transition),
        features=features,
        weights=d,
    )


@dataclass(frozen=True)
class ContractionReport:
    gamma_norm: float
    gamma_p_norm: float
    contracts: bool

    def as_dict(self) -> dict:
        return {"gamma_norm": self.gamma_norm, "gamma_p_norm": self.gamma_p_norm,
                "contracts": self.contracts}


def contraction_report(proj: RegularizedProjector, mdp: MdpModel) -> ContractionReport:
    """gamma||Gamma_eta||_inf, gamma||Gamma_eta P||_inf and whether the latter is < 1."""
    if abs(proj.gamma - mdp.gamma) > 0:
        raise ValidationError("projector was built for a different discount factor")
    gp = mdp.gamma * inf_norm(proj.gamma_eta @ mdp.transition)
    return ContractionReport(gamma_norm=mdp.gamma * proj.inf_norm, gamma_p_norm=gp, contracts=bool(gp < 1.0))


@dataclass(frozen=True)
class ConvexityConstants:
    mu_eta: float
    l_eta: float
    kappa: float


def convexity_constants(features: FeatureSet, d: WeightDistribution, eta: float) -> ConvexityConstants:
    """Strong-convexity / smoothness moduli: extreme eigenvalues of Phi^T D Phi, shifted by eta."""
    G = features.phi.T @ (d.d[:, None] * features.phi)
    if np.max(np.abs(G - G.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(G))):
        raise NumericError("Phi^T D Phi is not symmetric to working precision")
    ev = linalg.eigvalsh(0.5 * (G + G.T))
    mu, l = float(ev[0]) + eta, float(ev[-1]) + eta
    kappa = l / mu if mu > 0 else np.inf
    return ConvexityConstants(mu_eta=mu, l_eta=l, kappa=kappa)


def projection_matrix(features: FeatureSet, d: WeightDistribution, eta: float = 0.0,
                      method: str = "cholesky") -> np.ndarray:
    """Gamma_eta alone, by Cholesky (default) or a plain LU solve of
    (Phi^T D Phi + eta I) X = Phi^T D (``method="lu"``)."""
    rhs = features.phi.T * d.d[None, :]
    if method == "lu":
        M = gram(features, d) + eta * np.eye(features.h)
        return features.phi @ linalg.solve(M, rhs, assume_a="gen")
    (c, low), _ = _factor(features, d, eta)
    return features.phi @ linalg.cho_solve((c, low), rhs)


def weight_from_mode(mode, n_pairs: int, stationary: Optional[np.ndarray] = None) -> WeightDistribution:
    """Resolve a weight mode ('uniform', 'stationary', or an explicit vector)."""
    if isinstance(mode, str):
        if mode == "uniform":
            return WeightDistribution.uniform(n_pairs)
        if mode == "stationary":
            if stationary is None:
                raise ValidationError("weight_mode 'stationary' needs a behavior chain")
            return WeightDistribution(stationary)
        raise ValidationError(f"unknown weight mode {mode!r}")
    vec = np.asarray(mode, dtype=float)
    if vec.shape != (n_pairs,):
        raise ValidationError(f"explicit weight vector must have length {n_pairs}")
    return WeightDistribution(vec)
