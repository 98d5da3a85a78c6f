"""Error metrics, theory-side constants, order-level iteration budgets and
oscillation detection."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import PreconditionError, ValidationError
from .mdp import FeatureSet, MdpModel
from .projection import (
    RegularizedProjector,
    WeightDistribution,
    build_projector,
    convexity_constants,
    inf_norm,
)
from .planners import bellman_target

TAIL_FRACTION = 0.2


def inf_error(theta, theta_star, features: FeatureSet):
    """(||Phi(theta - theta*)||_inf, its square)."""
    e = inf_norm(features.phi @ (np.asarray(theta, float) - np.asarray(theta_star, float)))
    return e, e * e


def inf_errors(thetas, theta_star, features: FeatureSet) -> np.ndarray:
    """Row-wise ||Phi(theta_j - theta*)||_inf."""
    diff = (np.atleast_2d(thetas) - np.asarray(theta_star, float)) @ features.phi.T
    return np.max(np.abs(diff), axis=1)


def sigma_eta_sq(mdp: MdpModel, features: FeatureSet, theta_star, eta: float = None) -> float:
    """max_{s,a} Var_{s'}(r(s,a,s') + gamma max_u phi(s',u)^T theta*) ||phi(s,a)||_2^2,
    by exact enumeration of s'.  (``eta`` only identifies which theta* is used.)"""
    q = features.phi @ np.asarray(theta_star, float)
    vmax = q.reshape(mdp.n_states, mdp.n_actions).max(axis=1)
    y = mdp.rewards_by_next_state() + mdp.gamma * vmax[None, :]
    P = mdp.transition
    mean = np.sum(P * y, axis=1)
    var = np.sum(P * (y - mean[:, None]) ** 2, axis=1)
    return float(np.max(var * np.sum(features.phi ** 2, axis=1)))


@dataclass(frozen=True)
class TheoryConstants:
    eta: float
    gamma: float
    mu_eta: float
    l_eta: float
    kappa: float
    gamma_norm: float
    gamma_p_norm: float
    g1_eta: float
    g2_eta: float
    g3_eta: float
    sigma_eta_sq: float
    theta_star_norm: float
    phi_theta_star_inf: float
    reward_max: float

    def as_dict(self) -> dict:
        return asdict(self)


def g_constants(eta, gamma, phi_theta_star_inf, reward_max, sigma_sq):
    """(g1, g2, g3) of the second-moment bound on the stochastic gradient."""
    g1 = 16.0 + 16.0 * eta
    g2 = (42.0 + 32.0 * eta) * gamma ** 2
    g3 = (32.0 * (1.0 + eta) * gamma ** 2 * phi_theta_star_inf ** 2
          + (16.0 + 16.0 * eta) * reward_max ** 2 + 8.0 * sigma_sq)
    return g1, g2, g3


def theory_constants(mdp: MdpModel, features: FeatureSet, d: WeightDistribution, eta: float,
                     theta_star) -> TheoryConstants:
    cc = convexity_constants(features, d, eta)
    proj = build_projector(features, d, eta, mdp)
    theta_star = np.asarray(theta_star, float)
    pts = inf_norm(features.phi @ theta_star)
    sig = sigma_eta_sq(mdp, features, theta_star, eta)
    g1, g2, g3 = g_constants(eta, mdp.gamma, pts, mdp.reward_max, sig)
    return TheoryConstants(
        eta=float(eta), gamma=mdp.gamma, mu_eta=cc.mu_eta, l_eta=cc.l_eta, kappa=cc.kappa,
        gamma_norm=proj.contraction, gamma_p_norm=proj.contraction_p,
        g1_eta=g1, g2_eta=g2, g3_eta=g3, sigma_eta_sq=sig,
        theta_star_norm=float(np.linalg.norm(theta_star)), phi_theta_star_inf=pts,
        reward_max=mdp.reward_max)


@dataclass(frozen=True)
class BudgetEstimate:
    """Order-level iteration counts: the bracketed expressions of the
    complexity bounds evaluated with leading constant 1.  Not thresholds."""

    K_order: float
    t_order: float
    regime: str
    inputs: dict
    label: str = "order-level"

    def as_dict(self) -> dict:
        return asdict(self)


def _margin(gamma_norm: float) -> float:
    if not gamma_norm < 1.0:
        raise PreconditionError(
            f"budget needs gamma*||Gamma_eta||_inf < 1, got {gamma_norm:.6g}")
    return 1.0 - gamma_norm


def budget_iid(constants: TheoryConstants, epsilon: float) -> BudgetEstimate:
    """K ~ l ||theta*||^2 / (eps mu^3 (1 - c)^2), t ~ 1/(1 - c), c = gamma||Gamma_eta||_inf."""
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    m = _margin(constants.gamma_norm)
    K = constants.l_eta * constants.theta_star_norm ** 2 / (epsilon * constants.mu_eta ** 3 * m ** 2)
    inputs = {"epsilon": epsilon, "l_eta": constants.l_eta, "mu_eta": constants.mu_eta,
              "theta_star_norm": constants.theta_star_norm, "gamma_norm": constants.gamma_norm}
    return BudgetEstimate(float(K), 1.0 / m, "iid", inputs)


def budget_markov(constants: TheoryConstants, tau_max_mean: float, epsilon: float) -> BudgetEstimate:
    """K ~ (l + kappa) tau eta^2 ||theta*||^2 / (mu^2 (1 - c)), t ~ 1/(1 - c).

    The displayed Markovian bound carries no explicit epsilon; ``epsilon`` is
    validated and echoed but does not enter K.
    """
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    if not tau_max_mean >= 1:
        raise ValidationError("tau_max_mean must be >= 1")
    c = constants
    m = _margin(c.gamma_norm)
    K = (c.l_eta + c.kappa) * tau_max_mean * c.eta ** 2 * c.theta_star_norm ** 2 / (c.mu_eta ** 2 * m)
    inputs = {"epsilon": epsilon, "tau_max_mean": tau_max_mean, "l_eta": c.l_eta, "kappa": c.kappa,
              "eta": c.eta, "mu_eta": c.mu_eta, "theta_star_norm": c.theta_star_norm,
              "gamma_norm": c.gamma_norm}
    return BudgetEstimate(float(K), 1.0 / m, "markov", inputs)


# -- oscillation ----------------------------------------------------------------

@dataclass(frozen=True)
class OscillationMetrics:
    tail_mean_error: float
    tail_max_error: float
    revisit_count: int
    converged_flag: bool
    threshold: float

    def as_dict(self) -> dict:
        return asdict(self)


def default_threshold(theta_star, features: FeatureSet) -> float:
    return 1e-2 * (1.0 + inf_norm(features.phi @ np.asarray(theta_star, float)))


def count_revisits(errors: np.ndarray) -> int:
    """Times the sequence climbs back above twice its minimum after having
    been at or below that level."""
    errors = np.asarray(errors, float)
    if errors.size == 0:
        return 0
    level = 2.0 * errors.min()
    below = errors <= level
    # upward crossings: below at j-1, above at j
    return int(np.sum(below[:-1] & ~below[1:]))


def oscillation_metrics(run, theta_star, features: FeatureSet, threshold: Optional[float] = None,
                        tail_fraction: float = TAIL_FRACTION) -> OscillationMetrics:
    """Tail statistics of ||Phi(theta - theta*)||_inf over the last
    ``tail_fraction`` of the logged iterates of ``run`` (anything with a
    ``thetas`` array)."""
    if not 0 < tail_fraction <= 1:
        raise ValidationError("tail_fraction must lie in (0, 1]")
    errs = inf_errors(run.thetas, theta_star, features)
    n_tail = max(1, int(np.ceil(tail_fraction * errs.size)))
    tail = errs[-n_tail:]
    thr = default_threshold(theta_star, features) if threshold is None else float(threshold)
    return OscillationMetrics(float(tail.mean()), float(tail.max()), count_revisits(tail),
                              bool(tail.max() < thr), thr)


# -- outer-loop decomposition ---------------------------------------------------

def proof_delta(gamma_norm: float) -> Optional[float]:
    """delta = 2c^2/(1 - c^2) for c = gamma||Gamma_eta||_inf < 1; None otherwise."""
    c2 = gamma_norm ** 2
    return 2.0 * c2 / (1.0 - c2) if c2 < 1.0 else None


@dataclass
class DecompositionCheck:
    delta: float
    lhs: np.ndarray
    rhs: np.ndarray
    slack: float = 1e-9
    extra: dict = field(default_factory=dict)

    @property
    def margin(self) -> np.ndarray:
        return self.rhs + self.slack - self.lhs

    @property
    def holds(self) -> bool:
        return bool(np.all(self.margin >= 0))


def outer_decomposition(outer_thetas, proj: RegularizedProjector, mdp: MdpModel,
                        features: FeatureSet, theta_star, delta: float,
                        slack: float = 1e-9) -> DecompositionCheck:
    """For consecutive outer iterates (theta_{t-1,K}, theta_{t,K}) evaluate

    lhs = ||Phi theta_t - Phi theta*||_inf^2
    rhs = (1+delta)||Phi theta_t - Gamma_eta T Phi theta_{t-1}||_inf^2
          + (1+1/delta) gamma^2 ||Gamma_eta||_inf^2 ||Phi theta_{t-1} - Phi theta*||_inf^2.
    """
    if not delta > 0:
        raise ValidationError("delta must be positive")
    outer = np.atleast_2d(outer_thetas)
    phi = features.phi
    ts = np.asarray(theta_star, float)
    lhs, rhs = [], []
    for prev, cur in zip(outer[:-1], outer[1:]):
        step = inf_norm(phi @ cur - proj.gamma_eta @ bellman_target(mdp, features, prev))
        e_prev = inf_norm(phi @ (prev - ts))
        lhs.append(inf_norm(phi @ (cur - ts)) ** 2)
        rhs.append((1 + delta) * step ** 2
                   + (1 + 1 / delta) * mdp.gamma ** 2 * proj.inf_norm ** 2 * e_prev ** 2)
    return DecompositionCheck(delta, np.array(lhs), np.array(rhs), slack)


def decomposition_deltas(gamma_norm: float, grid: Sequence[float] = (0.1, 1.0, 10.0)) -> list:
    """delta values to test: the proof's choice when defined, else delta = 1, plus ``grid``."""
    d0 = proof_delta(gamma_norm)
    out = [d0 if d0 is not None else 1.0]
    out += [g for g in grid if g not in out]
    return out
