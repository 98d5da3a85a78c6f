"""Model-based iterations (P-VI, RP-VI, model-based RegQ) and fixed-point
certification by enumerating deterministic policies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg

from .errors import ConditioningError, SizeError, ValidationError
from .mdp import (
    DeterministicPolicy,
    FeatureSet,
    MdpModel,
    TIE_TOL,
    all_deterministic_policies,
    greedy_next_values,
    greedy_policy,
    has_ties,
    policy_matrix,
)
from .projection import COND_LIMIT, WeightDistribution, build_projector, gram, inf_norm

ENUMERATION_CAP = 2 ** 20
PLANNER_TOL = 1e-10
RESIDUAL_TOL = 1e-8


def bellman_target(mdp: MdpModel, features: FeatureSet, theta) -> np.ndarray:
    """T Phi theta = R + gamma P Pi_{Phi theta} Phi theta."""
    q = features.phi @ np.asarray(theta, dtype=float)
    return mdp.reward + mdp.gamma * mdp.transition @ greedy_next_values(mdp, q)


@dataclass
class PlanTrajectory:
    """Iterates of a model-based recursion.

    ``thetas[k]`` is theta_k (``thetas[0]`` the start).  ``residuals[k]`` is
    ``||Phi theta_{k+1} - Gamma_eta T Phi theta_k||_inf`` for step k and
    ``errors[k]`` is ``||Phi(theta_k - theta_star)||_inf`` when a reference
    solution was supplied.
    """

    algorithm: str
    thetas: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    errors: Optional[np.ndarray] = None
    ties_seen: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.thetas[-1]


def _attach_errors(traj: PlanTrajectory, features: FeatureSet, theta_star) -> PlanTrajectory:
    if theta_star is not None:
        diff = (traj.thetas - np.asarray(theta_star, dtype=float)) @ features.phi.T
        traj.errors = np.max(np.abs(diff), axis=1)
    return traj


def _projected_iteration(name, mdp, features, d, eta, theta0, max_iters, tol, theta_star):
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    if not tol > 0:
        raise ValidationError("tol must be positive")
    proj = build_projector(features, d, eta, mdp)
    theta = np.zeros(features.h) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (features.h,):
        raise ValidationError(f"theta0 must have length {features.h}")
    thetas, residuals = [theta.copy()], []
    ties = False
    converged = False
    for _ in range(max_iters):
        ties |= has_ties(features.phi @ theta, mdp.n_actions)
        y = bellman_target(mdp, features, theta)
        nxt = proj.target_parameter(y)
        residuals.append(inf_norm(features.phi @ nxt - proj.gamma_eta @ y))
        thetas.append(nxt)
        step = np.max(np.abs(nxt - theta))
        theta = nxt
        if step < tol:
            converged = True
            break
    traj = PlanTrajectory(name, np.array(thetas), np.array(residuals), converged,
                          len(thetas) - 1, ties_seen=ties,
                          meta={"eta": eta, "gamma": mdp.gamma, "contraction_p": proj.contraction_p,
                                "contraction": proj.contraction})
    return _attach_errors(traj, features, theta_star)


def rp_vi(mdp: MdpModel, features: FeatureSet, d: WeightDistribution, eta: float,
          theta0=None, max_iters: int = 10_000, tol: float = PLANNER_TOL,
          theta_star=None) -> PlanTrajectory:
    """Regularized projected value iteration,
    theta_{k+1} = (Phi^T D Phi + eta I)^{-1} Phi^T D (R + gamma P Pi_{Phi theta_k} Phi theta_k).

    Stops once ``||theta_{k+1} - theta_k||_inf < tol`` or after ``max_iters``
    steps.  A tiny ``tol`` (e.g. 1e-300) effectively spends the whole budget.
    """
    return _projected_iteration("rp_vi", mdp, features, d, eta, theta0, max_iters, tol, theta_star)


def p_vi(mdp: MdpModel, features: FeatureSet, d: WeightDistribution, theta0=None,
         max_iters: int = 10_000, tol: float = PLANNER_TOL, theta_star=None) -> PlanTrajectory:
    """Unregularized projected value iteration; may oscillate or diverge."""
    return _projected_iteration("p_vi", mdp, features, d, 0.0, theta0, max_iters, tol, theta_star)


def regq_model_based(mdp: MdpModel, features: FeatureSet, d: WeightDistribution, eta: float,
                     alpha: float, theta0=None, iters: int = 2000, theta_star=None) -> PlanTrajectory:
    """Deterministic RegQ recursion
    theta_{k+1} = theta_k + alpha (Phi^T D (T Phi theta_k - Phi theta_k) - eta theta_k),
    i.e. a full gradient step on L_eta(., theta_k) evaluated at theta_k.

    Runs exactly ``iters`` steps.  ``residuals[k]`` is the self-consistency
    gap ``||Phi theta_{k+1} - Gamma_eta T Phi theta_k||_inf``, which is zero
    only for RP-VI steps.
    """
    if not 0 <= alpha <= 1:
        raise ValidationError("alpha must lie in [0, 1]")
    if eta < 0:
        raise ValidationError("eta must be nonnegative")
    phi = features.phi
    weighted = phi.T * d.d[None, :]  # Phi^T D
    nS, nA = mdp.n_states, mdp.n_actions
    theta = np.zeros(features.h) if theta0 is None else np.array(theta0, dtype=float)
    thetas = np.empty((iters + 1, features.h))
    thetas[0] = theta
    ties = False
    diverged_at = None
    # a diverging orbit is a legitimate outcome: overflow is recorded, not raised
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(iters):
            q = phi @ theta
            top = q.reshape(nS, nA).max(axis=1)
            if not ties and diverged_at is None:
                ties = has_ties(q, nA)
            y = mdp.reward + mdp.gamma * (mdp.transition @ top)
            theta = theta + alpha * (weighted @ (y - q) - eta * theta)
            thetas[k + 1] = theta
            if diverged_at is None and not np.all(np.isfinite(theta)):
                diverged_at = k + 1
        proj = build_projector(features, d, eta, mdp)
        top = (thetas[:-1] @ phi.T).reshape(iters, nS, nA).max(axis=2)
        targets = mdp.reward + mdp.gamma * top @ mdp.transition.T
        gaps = thetas[1:] @ phi.T - targets @ proj.gamma_eta.T
        residuals = np.max(np.abs(gaps), axis=1)
    traj = PlanTrajectory("regq_model", thetas, residuals, False, iters,
                          ties_seen=ties, meta={"eta": eta, "alpha": alpha, "gamma": mdp.gamma,
                                                "diverged_at": diverged_at})
    with np.errstate(over="ignore", invalid="ignore"):
        return _attach_errors(traj, features, theta_star)


@dataclass(frozen=True)
class FixedPointSolution:
    theta: np.ndarray
    policy: DeterministicPolicy
    residual: float
    tie: bool


@dataclass
class FixedPointCertificate:
    """Census of RP-BE (eta > 0) or P-BE (eta = 0) solutions.

    ``existence`` is one of ``none``, ``unique``, ``multiple`` or
    ``indeterminate`` (some policy system was too ill-conditioned to decide
    and at most one solution was found).
    """

    solutions: List[FixedPointSolution]
    existence: str
    eta: float
    gamma: float
    indeterminate_policies: List[DeterministicPolicy] = field(default_factory=list)
    method: str = "enumeration"

    @property
    def theta_star(self) -> np.ndarray:
        if self.existence != "unique":
            raise ValidationError(f"no unique solution (existence={self.existence})")
        return self.solutions[0].theta

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "eta": self.eta,
            "gamma": self.gamma,
            "existence": self.existence,
            "solutions": [
                {"theta": s.theta.tolist(), "policy": list(s.policy.actions),
                 "residual": s.residual, "tie": s.tie}
                for s in self.solutions
            ],
            "indeterminate_policies": [list(p.actions) for p in self.indeterminate_policies],
        }


def rpbe_residual(mdp: MdpModel, features: FeatureSet, d: WeightDistribution, eta: float, theta) -> float:
    """||(Phi^T D Phi + eta I) theta - Phi^T D (R + gamma P Pi_{Phi theta} Phi theta)||_inf."""
    theta = np.asarray(theta, dtype=float)
    lhs = (gram(features, d) + eta * np.eye(features.h)) @ theta
    rhs = features.phi.T @ (d.d * bellman_target(mdp, features, theta))
    return inf_norm(lhs - rhs)


def _consistent(q: np.ndarray, pi: DeterministicPolicy, n_actions: int, tol: float):
    """Is every pi(s) a maximiser of q(s, .) up to ``tol``?  Returns (ok, tie)."""
    table = q.reshape(-1, n_actions)
    top = table.max(axis=1)
    chosen = table[np.arange(table.shape[0]), pi.zero_based()]
    slack = tol * np.maximum(1.0, np.abs(top))
    ok = bool(np.all(chosen >= top - slack))
    return ok, has_ties(q, n_actions, tol)


def solve_by_enumeration(mdp: MdpModel, features: FeatureSet, d: WeightDistribution, eta: float,
                         cap: int = ENUMERATION_CAP, tie_tol: float = TIE_TOL) -> FixedPointCertificate:
    """Exact census of solutions of
    (Phi^T D Phi + eta I) theta = Phi^T D (R + gamma P Pi_{Phi theta} Phi theta).

    For every deterministic policy pi the linear system with Pi_pi in place
    of the greedy selector is solved; the solution is kept when pi is greedy
    for Phi theta (ties within ``tie_tol`` accepted, duplicates merged and
    represented by the lowest-index greedy policy).
    """
    nS, nA = mdp.n_states, mdp.n_actions
    if nA ** nS > cap:
        raise SizeError(f"|A|^|S| = {nA ** nS} exceeds the enumeration cap {cap}")
    phi, w = features.phi, d.d
    base = gram(features, d) + eta * np.eye(features.h)
    b = phi.T @ (w * mdp.reward)
    coupling = phi.T @ (w[:, None] * mdp.transition)  # Phi^T D P
    found: List[FixedPointSolution] = []
    indeterminate: List[DeterministicPolicy] = []
    for pi in all_deterministic_policies(nS, nA):
        A = base - mdp.gamma * coupling @ policy_matrix(pi, nS, nA) @ phi
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            indeterminate.append(pi)
            continue
        theta = linalg.solve(A, b)
        q = phi @ theta
        ok, tie = _consistent(q, pi, nA, tie_tol)
        if not ok:
            continue
        scale = 1.0 + inf_norm(q)
        dup = next((s for s in found if inf_norm(phi @ (s.theta - theta)) <= 1e-9 * scale), None)
        if dup is not None:
            continue
        rep = greedy_policy(features, theta, nA)
        res = rpbe_residual(mdp, features, d, eta, theta)
        if res >= RESIDUAL_TOL * scale:
            continue
        theta.setflags(write=False)
        found.append(FixedPointSolution(theta, rep, res, tie))

    if indeterminate and len(found) < 2:
        existence = "indeterminate"
    else:
        existence = {0: "none", 1: "unique"}.get(len(found), "multiple")
    return FixedPointCertificate(found, existence, float(eta), mdp.gamma, indeterminate)


def mspbe_value(mdp: MdpModel, features: FeatureSet, d: WeightDistribution, theta) -> float:
    """f(theta) = 0.5 ||Gamma T Phi theta - Phi theta||_D^2 with the unregularized projection."""
    proj = build_projector(features, d, 0.0, mdp)
    theta = np.asarray(theta, dtype=float)
    r = proj.gamma_eta @ bellman_target(mdp, features, theta) - features.phi @ theta
    return float(0.5 * np.sum(d.d * r * r))


def require_unique(cert: FixedPointCertificate) -> np.ndarray:
    if cert.existence != "unique":
        raise ConditioningError(f"fixed point not certified unique (existence={cert.existence})")
    return cert.solutions[0].theta
