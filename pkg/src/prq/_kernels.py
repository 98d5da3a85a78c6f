"""Compiled inner loops.

Every kernel consumes pre-drawn uniforms (two per step) so that chunked
execution reproduces the step-by-step Python reference bit for bit in the
random stream.  Inverse CDFs are prepared by :func:`cdf_rows` and searched
with the rule "first k with u < cdf[k]".
"""

from __future__ import annotations

import numba
import numpy as np

LIMIT = 1e12


def cdf_rows(p: np.ndarray) -> np.ndarray:
    """Row-wise CDF with every entry from the last positive mass on set to 1.

    Guarantees that a uniform in [0, 1) never lands on a zero-probability
    index, whatever the rounding of the cumulative sum.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    c = np.cumsum(p, axis=1)
    for i in range(p.shape[0]):
        pos = np.flatnonzero(p[i] > 0)
        c[i, pos[-1]:] = 1.0
    return c


@numba.njit(cache=True)
def _draw(cdf, u):
    k = 0
    n = cdf.shape[0]
    while k < n - 1 and u >= cdf[k]:
        k += 1
    return k


@numba.njit(cache=True)
def markov_rows(u, s, bcdf, pcdf, n_actions, rows, next_states):
    """Behaviour-chain trajectory: a ~ beta(.|s) with u[n,0], s' ~ P with u[n,1]."""
    for n in range(u.shape[0]):
        a = _draw(bcdf[s], u[n, 0])
        i = s * n_actions + a
        sn = _draw(pcdf[i], u[n, 1])
        rows[n] = i
        next_states[n] = sn
        s = sn
    return s


@numba.njit(cache=True)
def hitting_episodes(u, row, steps, target, start, pcdf, bcdf, n_actions, out, n_done, max_steps):
    """Run first-passage episodes of the (s, a) chain, resuming mid-episode.

    Each transition uses u[n,0] for s' ~ P(.|s,a) and u[n,1] for
    a' ~ beta(.|s').  Returns (row, steps, n_done); stops early once ``out``
    is full.  Episodes longer than ``max_steps`` are recorded as -1.
    """
    for n in range(u.shape[0]):
        if n_done >= out.shape[0]:
            break
        sn = _draw(pcdf[row], u[n, 0])
        an = _draw(bcdf[sn], u[n, 1])
        row = sn * n_actions + an
        steps += 1
        if row == target or steps >= max_steps:
            out[n_done] = steps if row == target else -1
            n_done += 1
            row = start
            steps = 0
    return row, steps, n_done


@numba.njit(cache=True)
def sgd_chunk(u, markov, s, dcdf, bcdf, pcdf, rtab, phi, alphas, eta, gamma, K, n_actions,
              prq, theta, prev, target, vmax, vtie, step0, stride, log_theta, log_target, n_log,
              outer, n_outer, tie_tol):
    """Single-sample regularized Q-learning steps for one chunk of uniforms.

    ``prq`` selects the periodic target (refreshed every K steps) versus the
    coupled update whose target is the current iterate.  ``vmax``/``vtie``
    cache the greedy target value (and a tie flag) per state while the
    target is frozen.  Returns (state, n_log, n_outer, ties, status, step)
    where status 1 flags a diverged iterate at global step ``step``; ``prev``
    then holds the last guarded iterate.
    """
    h = phi.shape[1]
    n_states = vmax.shape[0]
    ties = 0
    for n in range(u.shape[0]):
        if markov:
            a = _draw(bcdf[s], u[n, 0])
            i = s * n_actions + a
        else:
            i = _draw(dcdf, u[n, 0])
        sn = _draw(pcdf[i], u[n, 1])
        r = rtab[i, sn]
        if prq:
            best = vmax[sn]
            if vtie[sn]:
                ties += 1
        else:
            best = -np.inf
            second = -np.inf
            for b in range(n_actions):
                v = 0.0
                for j in range(h):
                    v += phi[sn * n_actions + b, j] * theta[j]
                if v > best:
                    second = best
                    best = v
                elif v > second:
                    second = v
            if best - second <= tie_tol * max(1.0, abs(best)):
                ties += 1
        q = 0.0
        for j in range(h):
            q += phi[i, j] * theta[j]
        e = r + gamma * best - q
        alpha = alphas[n]
        bad = False
        for j in range(h):
            prev[j] = theta[j]
            theta[j] = theta[j] - alpha * (-e * phi[i, j] + eta * theta[j])
            if not (abs(theta[j]) <= LIMIT):
                bad = True
        st = step0 + n + 1
        if bad:
            return sn, n_log, n_outer, ties, 1, st
        if st % stride == 0:
            for j in range(h):
                log_theta[n_log, j] = theta[j]
                log_target[n_log, j] = target[j] if prq else theta[j]
            n_log += 1
        if prq and st % K == 0:
            for j in range(h):
                target[j] = theta[j]
                outer[n_outer, j] = theta[j]
            n_outer += 1
            refresh_max(phi, target, n_actions, n_states, vmax, vtie, tie_tol)
        s = sn
    return s, n_log, n_outer, ties, 0, step0 + u.shape[0]


@numba.njit(cache=True)
def refresh_max(phi, target, n_actions, n_states, vmax, vtie, tie_tol):
    h = phi.shape[1]
    for s in range(n_states):
        best = -np.inf
        second = -np.inf
        for b in range(n_actions):
            v = 0.0
            for j in range(h):
                v += phi[s * n_actions + b, j] * target[j]
            if v > best:
                second = best
                best = v
            elif v > second:
                second = v
        vmax[s] = best
        vtie[s] = best - second <= tie_tol * max(1.0, abs(best))
