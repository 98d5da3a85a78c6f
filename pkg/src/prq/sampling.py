"""Observation generators (i.i.d. and behaviour-chain), the chain's stationary
distribution and first-passage (hitting) times."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .errors import ModelError, NumericError, ValidationError
from .mdp import ROW_SUM_TOL, MdpModel, StochasticPolicy
from .projection import WeightDistribution

RNG_ALGORITHM = "numpy.random.PCG64/SeedSequence"
STATIONARY_TOL = 1e-10
_CHUNK = 1 << 16


# -- random streams ---------------------------------------------------------

@dataclass(frozen=True)
class SeededRng:
    """A seed plus the fixed generator used to expand it.

    The bit stream of PCG64 seeded through SeedSequence is specified by
    numpy and is platform independent.  ``stream`` separates independent
    streams derived from one seed (e.g. a run and its diagnostics).
    """

    seed: int
    stream: int = 0
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError(f"seed must be an integer in [0, 2^64), got {self.seed!r}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return SeededRng(seed, stream).generator()


# -- observations -----------------------------------------------------------

@dataclass(frozen=True)
class Observation:
    """One transition (s, a, s', r); states and actions are 1-based."""

    s: int
    a: int
    s_next: int
    r: float

    def row(self, n_actions: int) -> int:
        """0-based row of (s, a)."""
        return (self.s - 1) * n_actions + self.a - 1


def _pick(cdf: np.ndarray, u) -> np.ndarray:
    """First index k with u < cdf[k]."""
    return np.searchsorted(cdf, u, side="right")


def _reward_table(mdp: MdpModel) -> np.ndarray:
    return mdp.rewards_by_next_state()


@dataclass(frozen=True)
class _Tables:
    dcdf: np.ndarray
    pcdf: np.ndarray
    rtab: np.ndarray


def _tables(mdp: MdpModel, d: Optional[WeightDistribution]) -> _Tables:
    dcdf = _kernels.cdf_rows(d.d)[0] if d is not None else np.ones(1)
    return _Tables(dcdf, _kernels.cdf_rows(mdp.transition), np.ascontiguousarray(_reward_table(mdp)))


def sample_iid(mdp: MdpModel, d: WeightDistribution, rng: np.random.Generator) -> Observation:
    """(s, a) ~ d by inverse CDF over rows, then s' ~ P(.|s, a).  Two uniforms."""
    if d.d.shape != (mdp.n_pairs,):
        raise ValidationError("weight distribution length does not match |S||A|")
    u = rng.random(2)
    i = int(_pick(_kernels.cdf_rows(d.d)[0], u[0]))
    sn = int(_pick(_kernels.cdf_rows(mdp.transition[i])[0], u[1]))
    s, a = divmod(i, mdp.n_actions)
    return Observation(s + 1, a + 1, sn + 1, float(_reward_table(mdp)[i, sn]))


def sample_iid_batch(mdp: MdpModel, d: WeightDistribution, rng: np.random.Generator, n: int):
    """Vectorised :func:`sample_iid`; same stream.  Returns 0-based ``rows``,
    ``next_states`` and rewards ``r``."""
    tb = _tables(mdp, d)
    u = rng.random((n, 2))
    rows = _pick(tb.dcdf, u[:, 0])
    # per-row inverse CDF on the transition matrix
    nxt = np.sum(u[:, 1:2] >= tb.pcdf[rows], axis=1)
    nxt = np.minimum(nxt, mdp.n_states - 1)
    return rows, nxt, tb.rtab[rows, nxt]


# -- behaviour chain --------------------------------------------------------

@dataclass(frozen=True)
class BehaviorChain:
    """Markov chain on (s, a) pairs induced by a behaviour policy.

    ``kernel[(s~,a~), (s,a)] = beta(a|s) P(s|s~,a~)``.  Pairs with
    ``beta(a|s) = 0`` are never entered; ``support`` marks the others, and
    irreducibility and ``mu_inf`` refer to the chain restricted to them
    (``mu_inf`` is zero off the support).
    """

    beta: StochasticPolicy
    kernel: np.ndarray
    mu_inf: np.ndarray
    irreducible: bool
    n_states: int
    n_actions: int
    support: Optional[np.ndarray] = None


def behavior_kernel(mdp: MdpModel, beta: StochasticPolicy) -> np.ndarray:
    if beta.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValidationError("behaviour policy shape does not match the MDP")
    return np.repeat(mdp.transition, mdp.n_actions, axis=1) * beta.probs.reshape(-1)[None, :]


def is_irreducible(kernel: np.ndarray) -> bool:
    n, labels = connected_components(kernel > 0, directed=True, connection="strong")
    return n == 1


def stationary_distribution(kernel: np.ndarray) -> np.ndarray:
    """Solve mu^T K = mu^T, 1^T mu = 1 (one balance equation replaced)."""
    n = kernel.shape[0]
    A = kernel.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    mu = linalg.solve(A, b)
    mu[np.abs(mu) < 1e-300] = 0.0
    if np.any(mu < -1e-12):
        raise NumericError("stationary solve produced negative mass")
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def build_behavior_chain(mdp: MdpModel, beta: StochasticPolicy) -> BehaviorChain:
    K = behavior_kernel(mdp, beta)
    if np.max(np.abs(K.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise NumericError("behaviour kernel rows do not sum to one")
    support = beta.probs.reshape(-1) > 0
    Ks = K[np.ix_(support, support)]
    if not is_irreducible(Ks):
        raise ModelError("behaviour chain is reducible on the pairs beta can select; "
                         "its stationary distribution is not unique")
    mu = np.zeros(K.shape[0])
    mu[support] = stationary_distribution(Ks)
    res = np.max(np.abs(mu @ K - mu))
    if res >= STATIONARY_TOL:
        raise NumericError(f"stationarity residual {res:.3g} exceeds {STATIONARY_TOL}")
    for arr in (K, mu, support):
        arr.setflags(write=False)
    return BehaviorChain(beta, K, mu, True, mdp.n_states, mdp.n_actions, support)


def initial_state(chain: BehaviorChain, rng: np.random.Generator, init=None) -> int:
    """Draw the starting state (1-based) from ``init`` (default uniform).  One uniform."""
    p = np.full(chain.n_states, 1.0 / chain.n_states) if init is None else np.asarray(init, float)
    if p.shape != (chain.n_states,) or np.any(p < 0) or abs(p.sum() - 1) > ROW_SUM_TOL:
        raise ValidationError("initial distribution must lie on the state simplex")
    return int(_pick(_kernels.cdf_rows(p)[0], rng.random())) + 1


def step_markov(chain: BehaviorChain, state: int, rng: np.random.Generator, mdp: MdpModel):
    """One behaviour step from state ``state`` (1-based): a ~ beta(.|s), then
    s' ~ P(.|s, a).  Returns ``(Observation, s')``; feed s' back as the next
    carry state."""
    if not 1 <= state <= chain.n_states:
        raise ValidationError(f"carry state {state} out of range")
    u = rng.random(2)
    s = state - 1
    a = int(_pick(_kernels.cdf_rows(chain.beta.probs[s])[0], u[0]))
    i = s * chain.n_actions + a
    sn = int(_pick(_kernels.cdf_rows(mdp.transition[i])[0], u[1]))
    obs = Observation(state, a + 1, sn + 1, float(_reward_table(mdp)[i, sn]))
    return obs, sn + 1


def markov_batch(chain: BehaviorChain, mdp: MdpModel, rng: np.random.Generator, n: int, state: int):
    """``n`` consecutive :func:`step_markov` draws.  Returns 0-based ``rows``,
    ``next_states`` and the final carry state (1-based)."""
    bcdf = _kernels.cdf_rows(chain.beta.probs)
    pcdf = _kernels.cdf_rows(mdp.transition)
    rows = np.empty(n, dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    s = state - 1
    for c0 in range(0, n, _CHUNK):
        m = min(_CHUNK, n - c0)
        u = rng.random((m, 2))
        s = _kernels.markov_rows(u, s, bcdf, pcdf, chain.n_actions, rows[c0:c0 + m], nxt[c0:c0 + m])
    return rows, nxt, s + 1


# -- hitting times ----------------------------------------------------------

@dataclass(frozen=True)
class HittingTimes:
    """``matrix[x, y]`` = E[inf{n >= 1 : X_n = y} | X_0 = x] on 0-based rows;
    ``inf`` for targets the behaviour policy never selects."""

    matrix: np.ndarray

    @property
    def tau_max_mean(self) -> float:
        """Largest finite expected first-passage time."""
        return float(self.matrix[np.isfinite(self.matrix)].max())


def expected_hitting_times(chain: BehaviorChain) -> HittingTimes:
    """Solve h = 1 + K_{-y} h per target y, K_{-y} being K with column y zeroed."""
    if not chain.irreducible:
        raise ModelError("hitting times need an irreducible chain")
    K = chain.kernel
    n = K.shape[0]
    support = np.ones(n, bool) if chain.support is None else chain.support
    H = np.full((n, n), np.inf)
    for y in np.flatnonzero(support):
        Q = K.copy()
        Q[:, y] = 0.0
        A = np.eye(n) - Q
        if np.linalg.cond(A) > 1e12:
            raise NumericError(f"hitting-time system for target {y} is singular")
        H[:, y] = linalg.solve(A, np.ones(n))
    H.setflags(write=False)
    return HittingTimes(H)


@dataclass(frozen=True)
class HittingSample:
    times: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.times.mean())

    @property
    def stderr(self) -> float:
        return float(self.times.std(ddof=1) / np.sqrt(self.times.size))

    @property
    def max(self) -> int:
        return int(self.times.max())


def simulate_hitting_times(chain: BehaviorChain, mdp: MdpModel, start: int, target: int,
                           n_episodes: int, rng: np.random.Generator,
                           max_steps: int = 10 ** 7) -> HittingSample:
    """Monte Carlo first-passage times from row ``start`` to row ``target`` (0-based)."""
    bcdf = _kernels.cdf_rows(chain.beta.probs)
    pcdf = _kernels.cdf_rows(mdp.transition)
    out = np.empty(n_episodes, dtype=np.int64)
    row, steps, done = start, 0, 0
    while done < n_episodes:
        u = rng.random((_CHUNK, 2))
        row, steps, done = _kernels.hitting_episodes(u, row, steps, target, start, pcdf, bcdf,
                                                     chain.n_actions, out, done, max_steps)
    if np.any(out < 0):
        raise NumericError(f"an episode exceeded {max_steps} steps")
    return HittingSample(out)


def empirical_tau_max(chain: BehaviorChain, mdp: MdpModel, rng: np.random.Generator,
                      n_episodes: int = 1000) -> int:
    """Largest simulated first-passage time over all (start, target) row pairs."""
    n = chain.kernel.shape[0]
    return max(simulate_hitting_times(chain, mdp, x, y, n_episodes, rng).max
               for x in range(n) for y in range(n))
