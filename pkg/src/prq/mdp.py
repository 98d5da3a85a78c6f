"""Finite MDPs in (state, action)-row layout, features, policies and the
Bellman optimality operator.

Row ``(s-1)*|A| + a`` (1-based) of every |S||A|-indexed object holds the pair
``(s, a)``.  Public functions take and return 1-based states/actions; arrays
are stored 0-based internally, so row ``sa_index(s, a, nA) - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import IndexOutOfRange, NumericError, ValidationError

ROW_SUM_TOL = 1e-12
RANK_TOL = 1e-10
TIE_TOL = 1e-12


def _as_float_array(x, name, ndim):
    arr = np.array(x, dtype=float)
    if arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MdpModel:
    """Finite MDP tensors.

    Parameters
    ----------
    n_states, n_actions : int
    gamma : float
        Discount factor, strictly inside (0, 1).
    transition : ndarray, shape (|S||A|, |S|)
        Row ``(s,a)`` holds ``P(. | s, a)``.
    reward : ndarray, shape (|S||A|,)
        Expected one-step reward ``E[r(s,a,s') | s,a]``.
    reward_table : ndarray, shape (|S||A|, |S|), optional
        Per-next-state rewards ``r(s,a,s')``.  When omitted the reward is
        taken to be deterministic given ``(s,a)``.
    """

    n_states: int
    n_actions: int
    gamma: float
    transition: np.ndarray
    reward: np.ndarray
    reward_table: Optional[np.ndarray] = None

    def __post_init__(self):
        nS, nA = int(self.n_states), int(self.n_actions)
        if nS < 1 or nA < 1:
            raise ValidationError("n_states and n_actions must be positive")
        object.__setattr__(self, "n_states", nS)
        object.__setattr__(self, "n_actions", nA)
        gamma = float(self.gamma)
        if not 0.0 < gamma < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {gamma}")
        object.__setattr__(self, "gamma", gamma)

        P = _as_float_array(self.transition, "transition", 2)
        if P.shape != (nS * nA, nS):
            raise ValidationError(f"transition must have shape {(nS * nA, nS)}, got {P.shape}")
        if np.any(P < 0):
            raise ValidationError("transition has negative entries")
        bad = np.abs(P.sum(axis=1) - 1.0) > ROW_SUM_TOL
        if np.any(bad):
            raise ValidationError(f"transition rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        object.__setattr__(self, "transition", P)

        R = _as_float_array(self.reward, "reward", 1)
        if R.shape != (nS * nA,):
            raise ValidationError(f"reward must have length {nS * nA}, got {R.shape}")
        object.__setattr__(self, "reward", R)

        if self.reward_table is not None:
            table = _as_float_array(self.reward_table, "reward_table", 2)
            if table.shape != P.shape:
                raise ValidationError(f"reward_table must have shape {P.shape}")
            expected = np.sum(P * table, axis=1)
            if np.max(np.abs(expected - R)) > ROW_SUM_TOL * max(1.0, np.max(np.abs(R))):
                raise ValidationError("reward_table expectation under transition does not match reward")
            object.__setattr__(self, "reward_table", table)

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def rewards_by_next_state(self) -> np.ndarray:
        """``r(s,a,s')`` as a |S||A| x |S| table (constant in s' if no table given)."""
        if self.reward_table is not None:
            return self.reward_table
        return np.repeat(self.reward[:, None], self.n_states, axis=1)

    @property
    def reward_max(self) -> float:
        """Largest absolute one-step reward over reachable outcomes."""
        table = self.rewards_by_next_state()
        return float(np.max(np.abs(table[self.transition > 0]), initial=0.0))

    def with_gamma(self, gamma: float) -> "MdpModel":
        return MdpModel(self.n_states, self.n_actions, gamma, self.transition, self.reward, self.reward_table)


@dataclass(frozen=True)
class FeatureSet:
    """Feature matrix Phi (|S||A| x h) with cached metadata.

    ``rank_ok`` records full column rank; ``bound_ok`` records whether the
    boundedness assumption ``||Phi||_inf <= 1`` holds.  Neither is enforced:
    several results only need one of them.
    """

    phi: np.ndarray
    inf_norm: float = field(init=False)
    rank_ok: bool = field(init=False)
    bound_ok: bool = field(init=False)

    def __post_init__(self):
        phi = _as_float_array(self.phi, "phi", 2)
        if phi.shape[1] < 1:
            raise ValidationError("phi needs at least one column")
        object.__setattr__(self, "phi", phi)
        norm = float(np.max(np.sum(np.abs(phi), axis=1)))
        object.__setattr__(self, "inf_norm", norm)
        sv = np.linalg.svd(phi, compute_uv=False)
        object.__setattr__(self, "rank_ok", bool(np.sum(sv > RANK_TOL) == phi.shape[1]))
        object.__setattr__(self, "bound_ok", norm <= 1.0)

    @property
    def h(self) -> int:
        return self.phi.shape[1]

    @property
    def n_rows(self) -> int:
        return self.phi.shape[0]

    @classmethod
    def identity(cls, n: int) -> "FeatureSet":
        return cls(np.eye(n))


@dataclass(frozen=True)
class DeterministicPolicy:
    """Action per state, 1-based (``actions[s-1]`` is the action in state s)."""

    actions: tuple
    n_actions: int

    def __post_init__(self):
        acts = tuple(int(a) for a in self.actions)
        if any(a < 1 or a > self.n_actions for a in acts):
            raise IndexOutOfRange(f"policy actions {acts} outside [1, {self.n_actions}]")
        object.__setattr__(self, "actions", acts)

    @property
    def n_states(self) -> int:
        return len(self.actions)

    def __call__(self, s: int) -> int:
        return self.actions[s - 1]

    def zero_based(self) -> np.ndarray:
        return np.asarray(self.actions, dtype=np.int64) - 1


@dataclass(frozen=True)
class StochasticPolicy:
    """Action distribution per state; ``probs[s-1, a-1] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _as_float_array(self.probs, "probs", 2)
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValidationError("policy rows must lie on the simplex")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]


def sa_index(s: int, a: int, n_actions: int, n_states: Optional[int] = None) -> int:
    """1-based row index ``(s-1)*|A| + a`` of the pair (s, a)."""
    if not 1 <= a <= n_actions or s < 1 or (n_states is not None and s > n_states):
        raise IndexOutOfRange(f"(s={s}, a={a}) out of range for |S|={n_states}, |A|={n_actions}")
    return (s - 1) * n_actions + a


def sa_pair(row: int, n_actions: int) -> tuple:
    """Inverse of :func:`sa_index`."""
    if row < 1:
        raise IndexOutOfRange(f"row {row} < 1")
    s, a = divmod(row - 1, n_actions)
    return s + 1, a + 1


def _greedy_zero_based(q: np.ndarray, n_actions: int) -> np.ndarray:
    table = np.asarray(q, dtype=float).reshape(-1, n_actions)
    if np.any(np.isnan(table)):
        raise NumericError("NaN in action values; greedy policy undefined")
    # np.argmax returns the first maximiser, i.e. the smallest action index
    return np.argmax(table, axis=1)


def has_ties(q: np.ndarray, n_actions: int, tol: float = TIE_TOL) -> bool:
    """True if some state has two actions within ``tol`` of its maximum."""
    table = np.asarray(q, dtype=float).reshape(-1, n_actions)
    top = table.max(axis=1, keepdims=True)
    close = np.abs(table - top) <= tol * np.maximum(1.0, np.abs(top))
    return bool(np.any(close.sum(axis=1) > 1))


def greedy_policy(features: FeatureSet, theta, n_actions: int) -> DeterministicPolicy:
    """argmax_a phi(s,a)^T theta per state, ties to the smallest action."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (features.h,):
        raise ValidationError(f"theta must have length {features.h}")
    acts = _greedy_zero_based(features.phi @ theta, n_actions)
    return DeterministicPolicy(tuple(acts + 1), n_actions)


def greedy_from_q(q, n_actions: int) -> DeterministicPolicy:
    return DeterministicPolicy(tuple(_greedy_zero_based(q, n_actions) + 1), n_actions)


def policy_matrix(pi: DeterministicPolicy, n_states: int, n_actions: int) -> np.ndarray:
    """Selector matrix Pi_pi (|S| x |S||A|) whose s-th row is (e_s kron e_pi(s))^T."""
    if pi.n_states != n_states or pi.n_actions != n_actions:
        raise ValidationError("policy dimensions do not match")
    M = np.zeros((n_states, n_states * n_actions))
    M[np.arange(n_states), np.arange(n_states) * n_actions + pi.zero_based()] = 1.0
    return M


def greedy_next_values(mdp: MdpModel, q: np.ndarray) -> np.ndarray:
    """``Pi_Q Q``: the max action value in each state."""
    return np.asarray(q, dtype=float).reshape(mdp.n_states, mdp.n_actions).max(axis=1)


def bellman_apply(mdp: MdpModel, q) -> np.ndarray:
    """T Q = R + gamma P Pi_Q Q."""
    q = np.asarray(q, dtype=float)
    if q.shape != (mdp.n_pairs,):
        raise ValidationError(f"q must have length {mdp.n_pairs}")
    return mdp.reward + mdp.gamma * mdp.transition @ greedy_next_values(mdp, q)


def value_iteration(mdp: MdpModel, tol: float = 1e-13, max_iters: int = 100_000) -> np.ndarray:
    """Classical Q-value iteration; returns Q* to within ``tol`` (sup norm)."""
    q = np.zeros(mdp.n_pairs)
    for _ in range(max_iters):
        nxt = bellman_apply(mdp, q)
        if np.max(np.abs(nxt - q)) < tol * (1 - mdp.gamma):
            return nxt
        q = nxt
    return q


def all_deterministic_policies(n_states: int, n_actions: int):
    """Every deterministic policy in canonical (lexicographic, 1-based) order."""
    import itertools

    for acts in itertools.product(range(1, n_actions + 1), repeat=n_states):
        yield DeterministicPolicy(acts, n_actions)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               reward_noise: bool = False, sparsity: float = 0.0) -> MdpModel:
    """Random MDP for property tests and demos.

    ``sparsity`` zeroes that fraction of transition entries (rows keep at
    least one positive entry).
    """
    P = rng.random((n_states * n_actions, n_states))
    if sparsity > 0:
        P[rng.random(P.shape) < sparsity] = 0.0
        empty = P.sum(axis=1) == 0
        P[empty, rng.integers(n_states, size=empty.sum())] = 1.0
    P /= P.sum(axis=1, keepdims=True)
    if reward_noise:
        table = rng.uniform(-1, 1, size=P.shape)
        R = np.sum(P * table, axis=1)
        return MdpModel(n_states, n_actions, gamma, P, R, table)
    return MdpModel(n_states, n_actions, gamma, P, rng.uniform(-1, 1, size=n_states * n_actions))


def random_features(rng: np.random.Generator, n_rows: int, h: int, bounded: bool = True) -> FeatureSet:
    """Random full-rank features, rescaled to ``||Phi||_inf <= 1`` when ``bounded``."""
    while True:
        phi = rng.uniform(-1, 1, size=(n_rows, h))
        if bounded:
            phi /= np.max(np.sum(np.abs(phi), axis=1))
        fs = FeatureSet(phi)
        if fs.rank_ok and np.linalg.cond(phi) < 1e6:
            return fs

