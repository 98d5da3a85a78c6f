"""The regularized target loss L_eta, its exact and single-sample gradients,
and the sample-based PRQ and RegQ learners.

PRQ keeps a frozen target theta' for K inner steps of

    theta <- theta - alpha * g(theta, theta'; o),
    g = -(r + gamma max_u phi(s',u)^T theta' - phi(s,a)^T theta) phi(s,a) + eta theta,

and then copies the inner iterate into the target.  RegQ applies the same
single-sample step with the target tied to the current iterate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import _kernels
from .errors import DivergenceError, ValidationError
from .mdp import TIE_TOL, FeatureSet, MdpModel, has_ties
from .projection import WeightDistribution, build_projector, gram
from .sampling import (
    BehaviorChain,
    Observation,
    initial_state,
    sample_iid,
    step_markov,
)

DIVERGENCE_LIMIT = _kernels.LIMIT
_CHUNK = 1 << 16

Source = Union[WeightDistribution, BehaviorChain]


# -- objective ----------------------------------------------------------------

def _target_values(mdp: MdpModel, features: FeatureSet, theta_target) -> np.ndarray:
    """E_{s'}[r + gamma max_u phi(s',u)^T theta'] for every (s, a)."""
    q = features.phi @ np.asarray(theta_target, dtype=float)
    vmax = q.reshape(mdp.n_states, mdp.n_actions).max(axis=1)
    return mdp.reward + mdp.gamma * mdp.transition @ vmax


def loss_L_eta(theta, theta_target, mdp: MdpModel, features: FeatureSet,
               d: WeightDistribution, eta: float) -> float:
    """L_eta(theta, theta') in expectation form,

    0.5 sum_{s,a} d(s,a) (E[r + gamma max_u phi(s',u)^T theta'] - phi(s,a)^T theta)^2
    + 0.5 eta ||theta||^2.

    It differs from the projected form 0.5||Gamma y - Phi theta||_D^2 + ...
    by a constant in theta, so both share minimiser, gradient and Hessian.
    """
    theta = np.asarray(theta, dtype=float)
    res = _target_values(mdp, features, theta_target) - features.phi @ theta
    return float(0.5 * np.sum(d.d * res * res) + 0.5 * eta * theta @ theta)


def loss_L_eta_batch(thetas, targets, mdp: MdpModel, features: FeatureSet,
                     d: WeightDistribution, eta: float) -> np.ndarray:
    """Row-wise :func:`loss_L_eta` for stacked parameters (n x h)."""
    thetas = np.atleast_2d(thetas)
    q = np.atleast_2d(targets) @ features.phi.T
    vmax = q.reshape(q.shape[0], mdp.n_states, mdp.n_actions).max(axis=2)
    y = mdp.reward[None, :] + mdp.gamma * vmax @ mdp.transition.T
    res = y - thetas @ features.phi.T
    return 0.5 * (res * res) @ d.d + 0.5 * eta * np.sum(thetas * thetas, axis=1)


def grad_L_eta(theta, theta_target, mdp: MdpModel, features: FeatureSet,
               d: WeightDistribution, eta: float) -> np.ndarray:
    """(Phi^T D Phi + eta I) theta - Phi^T D (R + gamma P Pi_{Phi theta'} Phi theta')."""
    theta = np.asarray(theta, dtype=float)
    phi = features.phi
    y = _target_values(mdp, features, theta_target)
    return (gram(features, d) + eta * np.eye(features.h)) @ theta - phi.T @ (d.d * y)


def hessian_L_eta(features: FeatureSet, d: WeightDistribution, eta: float) -> np.ndarray:
    return gram(features, d) + eta * np.eye(features.h)


def inner_target_solution(theta_target, mdp: MdpModel, features: FeatureSet,
                          d: WeightDistribution, eta: float) -> np.ndarray:
    """theta*(theta') = argmin_theta L_eta(theta, theta')."""
    proj = build_projector(features, d, eta, mdp)
    return proj.target_parameter(_target_values(mdp, features, theta_target))


def stochastic_grad(theta, theta_target, obs: Observation, features: FeatureSet, eta: float,
                    gamma: float, n_actions: int) -> np.ndarray:
    """g(theta, theta'; o) for one observation o = (s, a, s', r)."""
    phi = features.phi
    theta = np.asarray(theta, dtype=float)
    theta_target = np.asarray(theta_target, dtype=float)
    i = obs.row(n_actions)
    nxt = phi[(obs.s_next - 1) * n_actions:obs.s_next * n_actions]
    td = obs.r + gamma * np.max(nxt @ theta_target) - phi[i] @ theta
    return -td * phi[i] + eta * theta


def stochastic_grad_batch(theta, theta_target, rows, next_states, rewards, features: FeatureSet,
                          eta: float, gamma: float, n_actions: int) -> np.ndarray:
    """:func:`stochastic_grad` for many observations (0-based rows / next states)."""
    phi = features.phi
    theta = np.asarray(theta, dtype=float)
    q_next = (phi @ np.asarray(theta_target, dtype=float)).reshape(-1, n_actions).max(axis=1)
    td = rewards + gamma * q_next[next_states] - phi[rows] @ theta
    return -td[:, None] * phi[rows] + eta * theta[None, :]


# -- runs -----------------------------------------------------------------------

@dataclass
class PrqConfig:
    """Hyper-parameters of a PRQ run.

    ``log_every`` defaults to K (one record per outer period).
    ``alpha_schedule`` maps an array of global step numbers (1-based) to
    step sizes; when absent the constant ``alpha`` is used.
    """

    T: int
    K: int
    alpha: float
    eta: float
    sampler_mode: str = "iid"
    theta_init: Optional[np.ndarray] = None
    log_every: Optional[int] = None
    alpha_schedule: Optional[Callable[[np.ndarray], np.ndarray]] = None
    init_dist: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.T) < 1 or int(self.K) < 1:
            raise ValidationError("T and K must be >= 1")
        if not 0.0 <= self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.eta < 0:
            raise ValidationError("eta must be nonnegative")
        if self.sampler_mode not in ("iid", "markov"):
            raise ValidationError(f"sampler_mode must be 'iid' or 'markov', got {self.sampler_mode!r}")
        if self.log_every is not None and int(self.log_every) < 1:
            raise ValidationError("log_every must be >= 1")
        self.T, self.K = int(self.T), int(self.K)

    @property
    def stride(self) -> int:
        return int(self.log_every) if self.log_every else self.K

    def echo(self) -> dict:
        out = asdict(self)
        out["alpha_schedule"] = None if self.alpha_schedule is None else repr(self.alpha_schedule)
        for key in ("theta_init", "init_dist"):
            if out[key] is not None:
                out[key] = np.asarray(out[key], dtype=float).tolist()
        return out


@dataclass
class LearnerRun:
    """Logged trajectory of a sample-based learner.

    Row j of ``thetas`` is the iterate after ``steps[j]`` updates
    (``steps[0] == 0`` is the initial point); ``targets[j]`` is the target
    in force for that step and ``(t[j], k[j])`` its outer/inner index.
    ``outer_thetas`` holds theta_{t,K} for t = 0..T (PRQ only).
    """

    algorithm: str
    seed: Optional[int]
    config: dict
    steps: np.ndarray
    t: np.ndarray
    k: np.ndarray
    thetas: np.ndarray
    targets: np.ndarray
    outer_thetas: np.ndarray
    tie_count: int
    losses: Optional[np.ndarray] = None
    inf_err_sq: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]


def _theta0(theta_init, h):
    theta = np.zeros(h) if theta_init is None else np.array(theta_init, dtype=float)
    if theta.shape != (h,):
        raise ValidationError(f"theta_init must have length {h}")
    return theta


def _as_generator(rng):
    if isinstance(rng, np.random.Generator):
        return rng, None
    from .sampling import make_rng

    return make_rng(int(rng)), int(rng)


def _loss_weights(source: Source) -> WeightDistribution:
    if isinstance(source, BehaviorChain):
        return WeightDistribution(source.mu_inf)
    return source


def _indices(steps, K, prq):
    if prq:
        t = np.maximum(1, -(-steps // K))
        return t, steps - (t - 1) * K
    return np.ones_like(steps), steps.copy()


def _finish(algorithm, seed, config, steps, thetas, targets, outer, ties, K, prq, mdp, features,
            source, eta, theta_star, with_loss) -> LearnerRun:
    t, k = _indices(steps, K, prq)
    run = LearnerRun(algorithm, seed, config, steps, t, k, thetas, targets, outer, int(ties))
    if with_loss:
        run.losses = loss_L_eta_batch(thetas, targets, mdp, features, _loss_weights(source), eta)
    if theta_star is not None:
        diff = (thetas - np.asarray(theta_star, dtype=float)) @ features.phi.T
        run.inf_err_sq = np.max(np.abs(diff), axis=1) ** 2
    return run


def _simulate(mdp, features, source, eta, alpha, schedule, n_steps, K, prq, theta0, rng,
              stride, init_dist):
    markov = isinstance(source, BehaviorChain)
    h, nA = features.h, mdp.n_actions
    if markov:
        if source.n_states != mdp.n_states or source.n_actions != nA:
            raise ValidationError("behaviour chain does not match the MDP")
        s = initial_state(source, rng, init_dist) - 1
        bcdf, dcdf = _kernels.cdf_rows(source.beta.probs), np.ones(1)
    else:
        if source.d.shape != (mdp.n_pairs,):
            raise ValidationError("weight distribution length does not match |S||A|")
        s = 0
        bcdf, dcdf = np.ones((1, 1)), _kernels.cdf_rows(source.d)[0]
    pcdf = _kernels.cdf_rows(mdp.transition)
    rtab = np.ascontiguousarray(mdp.rewards_by_next_state())
    phi = np.ascontiguousarray(features.phi)

    theta, target, prev = theta0.copy(), theta0.copy(), theta0.copy()
    vmax = np.empty(mdp.n_states)
    vtie = np.zeros(mdp.n_states, dtype=np.bool_)
    _kernels.refresh_max(phi, target, nA, mdp.n_states, vmax, vtie, TIE_TOL)
    log_theta = np.empty((n_steps // stride + 1, h))
    log_target = np.empty_like(log_theta)
    log_theta[0] = theta0
    log_target[0] = theta0
    outer = np.empty((n_steps // K + 1 if prq else 1, h))
    outer[0] = theta0
    n_log, n_outer, ties = 1, 1, 0
    for c0 in range(0, n_steps, _CHUNK):
        m = min(_CHUNK, n_steps - c0)
        u = rng.random((m, 2))
        if schedule is None:
            alphas = np.full(m, float(alpha))
        else:
            alphas = np.ascontiguousarray(schedule(np.arange(c0 + 1, c0 + m + 1)), dtype=float)
            if alphas.shape != (m,):
                raise ValidationError("alpha_schedule must return one step size per step")
        s, n_log, n_outer, chunk_ties, status, st = _kernels.sgd_chunk(
            u, markov, s, dcdf, bcdf, pcdf, rtab, phi, alphas, float(eta), float(mdp.gamma),
            int(K), nA, prq, theta, prev, target, vmax, vtie, c0, int(stride), log_theta,
            log_target, n_log, outer, n_outer, TIE_TOL)
        ties += chunk_ties
        if status:
            raise DivergenceError(f"iterate left the region ||theta||_inf <= {DIVERGENCE_LIMIT:g} "
                                  f"at step {st}", step=int(st), theta=prev.copy())
    steps = np.arange(n_log, dtype=np.int64) * stride
    return steps, log_theta[:n_log], log_target[:n_log], outer[:n_outer], ties


def prq_run(config: PrqConfig, mdp: MdpModel, features: FeatureSet, source: Source, rng,
            theta_star=None, with_loss: bool = True) -> LearnerRun:
    """Periodic regularized Q-learning (T outer periods of K inner steps).

    ``source`` is a :class:`WeightDistribution` for i.i.d. sampling or a
    :class:`BehaviorChain` for a single behaviour trajectory, whose state
    carries over outer-period boundaries.  ``rng`` is a Generator or an
    integer seed.  Raises :class:`DivergenceError` if the iterate leaves
    ``||theta||_inf <= 1e12``.
    """
    _check_mode(config.sampler_mode, source)
    gen, seed = _as_generator(rng)
    theta0 = _theta0(config.theta_init, features.h)
    steps, thetas, targets, outer, ties = _simulate(
        mdp, features, source, config.eta, config.alpha, config.alpha_schedule,
        config.T * config.K, config.K, True, theta0, gen, config.stride, config.init_dist)
    return _finish(f"prq_{config.sampler_mode}", seed, config.echo(), steps, thetas, targets, outer,
                   ties, config.K, True, mdp, features, source, config.eta, theta_star, with_loss)


def regq_run(mdp: MdpModel, features: FeatureSet, source: Source, eta: float, alpha: float,
             iters: int, theta_init=None, rng=0, log_every: int = 1, theta_star=None,
             with_loss: bool = True, alpha_schedule=None, init_dist=None) -> LearnerRun:
    """Coupled regularized Q-learning: theta <- theta - alpha g(theta, theta; o)."""
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"alpha must lie in [0, 1), got {alpha}")
    if int(iters) < 1 or int(log_every) < 1:
        raise ValidationError("iters and log_every must be >= 1")
    mode = "markov" if isinstance(source, BehaviorChain) else "iid"
    gen, seed = _as_generator(rng)
    theta0 = _theta0(theta_init, features.h)
    steps, thetas, targets, outer, ties = _simulate(
        mdp, features, source, eta, alpha, alpha_schedule, int(iters), 1, False, theta0, gen,
        int(log_every), init_dist)
    config = {"iters": int(iters), "alpha": alpha, "eta": eta, "sampler_mode": mode,
              "theta_init": theta0.tolist(), "log_every": int(log_every),
              "alpha_schedule": None if alpha_schedule is None else repr(alpha_schedule),
              "init_dist": None if init_dist is None else np.asarray(init_dist, float).tolist()}
    return _finish(f"regq_{mode}", seed, config, steps, thetas, targets, outer, ties, 1, False,
                   mdp, features, source, eta, theta_star, with_loss)


def _check_mode(mode, source):
    want = BehaviorChain if mode == "markov" else WeightDistribution
    if not isinstance(source, want):
        raise ValidationError(f"sampler_mode {mode!r} needs a {want.__name__}")


def reference_run(mdp: MdpModel, features: FeatureSet, source: Source, eta: float, alpha: float,
                  n_steps: int, K: Optional[int], rng, theta_init=None, stride: int = 1,
                  init_dist=None):
    """Plain step-by-step implementation of PRQ (``K`` given) or RegQ
    (``K=None``) built from :func:`sample_iid`, :func:`step_markov` and
    :func:`stochastic_grad`.  Slow; consumes the random stream exactly like
    the compiled runs.  Returns ``(steps, thetas, targets, outer, ties)``.
    """
    gen, _ = _as_generator(rng)
    markov = isinstance(source, BehaviorChain)
    nA = mdp.n_actions
    theta = _theta0(theta_init, features.h)
    target = theta.copy()
    state = initial_state(source, gen, init_dist) if markov else None
    steps, thetas, targets, outer = [0], [theta.copy()], [theta.copy()], [theta.copy()]
    ties = 0
    for st in range(1, n_steps + 1):
        if markov:
            obs, state = step_markov(source, state, gen, mdp)
        else:
            obs = sample_iid(mdp, source, gen)
        tgt = target if K is not None else theta
        nxt = features.phi[(obs.s_next - 1) * nA:obs.s_next * nA] @ tgt
        ties += has_ties(nxt, nA, TIE_TOL)
        theta = theta - alpha * stochastic_grad(theta, tgt, obs, features, eta, mdp.gamma, nA)
        if st % stride == 0:
            steps.append(st)
            thetas.append(theta.copy())
            targets.append(target.copy() if K is not None else theta.copy())
        if K is not None and st % K == 0:
            target = theta.copy()
            outer.append(theta.copy())
    return np.array(steps), np.array(thetas), np.array(targets), np.array(outer), ties


def expected_update(theta, theta_target, mdp, features, d, eta, alpha) -> np.ndarray:
    """E[theta - alpha g(theta, theta'; o)] under (s,a) ~ d, s' ~ P."""
    return np.asarray(theta, float) - alpha * grad_L_eta(theta, theta_target, mdp, features, d, eta)


__all__ = [
    "PrqConfig", "LearnerRun", "loss_L_eta", "loss_L_eta_batch", "grad_L_eta", "hessian_L_eta",
    "inner_target_solution", "stochastic_grad", "stochastic_grad_batch", "prq_run", "regq_run",
    "reference_run", "expected_update", "DIVERGENCE_LIMIT",
]
