"""Log-space forward-backward and Viterbi for finite-state hidden Markov chains.

Emissions enter as a ``(T, g)`` matrix of log densities, so the routines are
agnostic to what is being emitted.  For the claim-count models the emission
of period ``t`` in state ``j`` is a product over policies, computed by
:func:`poisson_log_emissions`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy


class NumericalError(FloatingPointError):
    """Raised when a recursion produces NaN."""


def logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    """Stable ``log(sum(exp(a)))``; all ``-inf`` input returns ``-inf``."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raise ValueError("logsumexp of an empty array")
    amax = np.max(a, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return out.reshape(())[()]
    return np.squeeze(out, axis=axis)


@dataclass
class ForwardBackwardResult:
    """Output of :func:`forward_backward`.

    Attributes
    ----------
    log_alpha, log_beta : ndarray, shape (T, g)
    loglik : float
    u_hat : ndarray, shape (T, g)
        Smoothed state probabilities ``P(C_t = j | data)``.
    v_hat : ndarray, shape (T - 1, g, g)
        Smoothed transition probabilities ``P(C_{t-1} = j, C_t = k | data)``.
    """

    log_alpha: np.ndarray
    log_beta: np.ndarray
    loglik: float
    u_hat: np.ndarray
    v_hat: np.ndarray


def _check_nan(arr: np.ndarray, name: str) -> None:
    if np.isnan(arr).any():
        t, j = np.argwhere(np.isnan(arr))[0][:2]
        raise NumericalError(f"NaN in {name} at period {t}, state {j}")


def _log_params(pi: np.ndarray, gamma: np.ndarray):
    pi = np.asarray(pi, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    g = pi.size
    if gamma.shape != (g, g):
        raise ValueError("transition matrix must be g x g")
    with np.errstate(divide="ignore"):
        return np.log(pi), np.log(gamma)


def forward(log_emis: np.ndarray, pi: np.ndarray, gamma: np.ndarray):
    """Forward pass; returns ``(log_alpha, loglik)``."""
    log_emis = np.asarray(log_emis, dtype=float)
    log_pi, log_gamma = _log_params(pi, gamma)
    T, g = log_emis.shape
    la = np.empty((T, g))
    la[0] = log_pi + log_emis[0]
    for t in range(1, T):
        la[t] = logsumexp(la[t - 1][:, None] + log_gamma, axis=0) + log_emis[t]
    _check_nan(la, "forward variables")
    return la, float(logsumexp(la[-1]))


def backward(log_emis: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    log_emis = np.asarray(log_emis, dtype=float)
    with np.errstate(divide="ignore"):
        log_gamma = np.log(np.asarray(gamma, dtype=float))
    T, g = log_emis.shape
    lb = np.zeros((T, g))
    for t in range(T - 2, -1, -1):
        lb[t] = logsumexp(log_gamma + (log_emis[t + 1] + lb[t + 1])[None, :], axis=1)
    _check_nan(lb, "backward variables")
    return lb


def forward_backward(log_emis: np.ndarray, pi: np.ndarray, gamma: np.ndarray) -> ForwardBackwardResult:
    """Smoothed state and transition probabilities in log space."""
    log_emis = np.asarray(log_emis, dtype=float)
    _, log_gamma = _log_params(pi, gamma)
    la, ll = forward(log_emis, pi, gamma)
    if not np.isfinite(ll):
        raise NumericalError("log-likelihood is not finite")
    lb = backward(log_emis, gamma)
    u = np.exp(la + lb - ll)
    u /= u.sum(axis=1, keepdims=True)
    lv = la[:-1, :, None] + log_gamma[None] + (log_emis[1:] + lb[1:])[:, None, :] - ll
    v = np.exp(lv)
    if v.size:
        v /= v.sum(axis=(1, 2), keepdims=True)
    _check_nan(u, "smoothed state probabilities")
    return ForwardBackwardResult(la, lb, ll, u, v)


def viterbi(log_emis: np.ndarray, pi: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Most likely state path; ties resolve to the lowest state index."""
    log_emis = np.asarray(log_emis, dtype=float)
    log_pi, log_gamma = _log_params(pi, gamma)
    T, g = log_emis.shape
    delta = log_pi + log_emis[0]
    back = np.zeros((T, g), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + log_gamma
        back[t] = np.argmax(scores, axis=0)
        delta = scores[back[t], np.arange(g)] + log_emis[t]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def stationary_distribution(gamma: np.ndarray) -> np.ndarray:
    """Left eigenvector of ``gamma`` for eigenvalue one, normalised."""
    gamma = np.asarray(gamma, dtype=float)
    g = gamma.shape[0]
    A = np.vstack([gamma.T - np.eye(g), np.ones((1, g))])
    b = np.zeros(g + 1)
    b[-1] = 1.0
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    sol = np.clip(sol, 0.0, None)
    return sol / sol.sum()


def poisson_log_emissions(counts: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Log emission matrix for independent Poisson counts.

    Parameters
    ----------
    counts : ndarray, shape (m, T)
    means : ndarray, shape (m, T, g)
        Poisson means per policy, period and state.  Zero means with zero
        counts contribute nothing.

    Returns
    -------
    ndarray, shape (T, g)
    """
    counts = np.asarray(counts, dtype=float)
    means = np.asarray(means, dtype=float)
    c = counts[:, :, None]
    with np.errstate(divide="ignore"):
        terms = xlogy(c, means) - means - gammaln(c + 1.0)
    return terms.sum(axis=0)


def mixed_poisson_pmf(n: np.ndarray, weights: np.ndarray, rates: np.ndarray) -> np.ndarray:
    """Probability of ``n`` under a finite mixture of Poisson laws."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ValueError("counts must be non-negative")
    n = n[..., None]
    w = np.asarray(weights, dtype=float)
    lam = np.asarray(rates, dtype=float)
    logp = xlogy(n, lam) - lam - gammaln(n + 1.0)
    return np.sum(w * np.exp(logp), axis=-1)
