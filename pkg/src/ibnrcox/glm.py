"""Weighted quasi-likelihood regressions used by the M-steps.

Responses may be non-integer and weights fractional, since both come from
conditional expectations.  Poisson and binomial fits use Newton / Fisher
scoring (IRLS) with step-halving so the objective never decreases.  The
Dirichlet regression hands its analytic gradient and Hessian to a
trust-region solver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import digamma, expit, gammaln, polygamma

logger = logging.getLogger(__name__)

LINKS = ("logit", "cloglog", "log")


class RankDeficientError(ValueError):
    """Raised when the design matrix lacks full column rank."""


@dataclass
class GlmFit:
    """Result of a Poisson or binomial fit."""

    coef: np.ndarray
    converged: bool
    n_iter: int
    loglik: float
    score_norm: float
    message: str = ""
    trace: list = field(default_factory=list)


def _check_design(X: np.ndarray, active: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("design matrix must be two-dimensional")
    if not np.any(active):
        raise ValueError("at least one observation needs positive weight")
    Xa = X[active]
    if np.linalg.matrix_rank(Xa) < X.shape[1]:
        raise RankDeficientError(
            f"design matrix has rank {np.linalg.matrix_rank(Xa)} < {X.shape[1]} columns"
        )
    return X


def _newton_loop(objective, score_hess, beta, tol, max_iter, scale):
    """Damped Newton ascent shared by the Poisson and binomial kernels."""
    f = objective(beta)
    trace = [f]
    converged = False
    message = ""
    it = 0
    g = np.zeros_like(beta)
    for it in range(1, max_iter + 1):
        g, H = score_hess(beta)
        if np.max(np.abs(g)) < tol * scale:
            converged = True
            it -= 1
            break
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            fc = objective(cand)
            if np.isfinite(fc) and fc >= f - 1e-12 * abs(f):
                break
            t *= 0.5
        else:
            message = "step-halving failed to improve the objective"
            break
        if fc < f:
            # a numerically flat step; keep the old point
            message = "objective flat to machine precision"
            converged = np.max(np.abs(g)) < 1e3 * tol * scale
            break
        beta, f = cand, fc
        trace.append(f)
    else:
        g, _ = score_hess(beta)
        converged = np.max(np.abs(g)) < tol * scale
        if not converged:
            message = "maximum iterations reached"
    return beta, f, converged, it, float(np.max(np.abs(g))) if g.size else 0.0, message, trace


# ---------------------------------------------------------------------------
# Poisson
# ---------------------------------------------------------------------------


def _prep_poisson(X, y, weights, offset):
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if np.any(w < 0) or np.any(y < 0):
        raise ValueError("weights and responses must be non-negative")
    active = (w > 0) & np.isfinite(off)
    return np.asarray(X, dtype=float), y, w, off, active


def poisson_loglik(beta, X, y, weights=None, offset=None) -> float:
    """``sum w (y * eta - exp(eta))`` with ``eta = X beta + offset``."""
    X, y, w, off, a = _prep_poisson(X, y, weights, offset)
    eta = X[a] @ beta + off[a]
    return float(np.sum(w[a] * (y[a] * eta - np.exp(eta))))


def poisson_score(beta, X, y, weights=None, offset=None) -> np.ndarray:
    X, y, w, off, a = _prep_poisson(X, y, weights, offset)
    mu = np.exp(X[a] @ beta + off[a])
    return X[a].T @ (w[a] * (y[a] - mu))


def fit_weighted_poisson(
    X, y, weights=None, offset=None, beta0=None, tol=1e-8, max_iter=100
) -> GlmFit:
    """Weighted Poisson regression with log link and offset.

    Rows with zero weight or ``-inf`` offset (zero exposure) are ignored.
    Convergence is declared when the max-norm of the score falls below
    ``tol * max(1, sum(w * y))``.
    """
    X, y, w, off, a = _prep_poisson(X, y, weights, offset)
    X = _check_design(X, a)
    Xa, ya, wa, oa = X[a], y[a], w[a], off[a]
    p = X.shape[1]
    if beta0 is None:
        beta = np.zeros(p)
        # start the intercept at the pooled rate when there is one
        rate = np.sum(wa * ya) / np.sum(wa * np.exp(oa))
        icol = _intercept_column(Xa)
        if icol is not None and rate > 0:
            beta[icol] = np.log(rate)
    else:
        beta = np.asarray(beta0, dtype=float).copy()

    def objective(b):
        eta = Xa @ b + oa
        with np.errstate(over="ignore"):
            return float(np.sum(wa * (ya * eta - np.exp(eta))))

    def score_hess(b):
        mu = np.exp(Xa @ b + oa)
        g = Xa.T @ (wa * (ya - mu))
        H = (Xa * (wa * mu)[:, None]).T @ Xa
        return g, H

    scale = max(1.0, float(np.sum(wa * ya)))
    beta, f, conv, it, gn, msg, trace = _newton_loop(objective, score_hess, beta, tol, max_iter, scale)
    if np.sum(wa * ya) == 0:
        conv, msg = False, "all responses are zero; intercept diverges to -inf"
    return GlmFit(beta, conv, it, f, gn, msg, trace)


def _intercept_column(X: np.ndarray):
    const = np.flatnonzero(np.all(X == 1.0, axis=0))
    return int(const[0]) if const.size else None


# ---------------------------------------------------------------------------
# Binomial
# ---------------------------------------------------------------------------


def _log_q_pair(eta: np.ndarray, link: str):
    """``(log q, log(1 - q), dq/deta)`` for the inverse link, computed stably."""
    if link == "logit":
        logq = -np.logaddexp(0.0, -eta)
        log1mq = -np.logaddexp(0.0, eta)
        q = expit(eta)
        dq = q * (1.0 - q)
    elif link == "cloglog":
        with np.errstate(over="ignore"):
            ee = np.exp(eta)
        log1mq = -ee
        with np.errstate(divide="ignore"):
            # log(1 - exp(-x)) ~ log(x) - x/2 for tiny x
            logq = np.where(ee < 1e-8, eta - 0.5 * ee, np.log(-np.expm1(-np.maximum(ee, 1e-8))))
        dq = np.exp(np.minimum(eta, 700.0) - ee)
        q = -np.expm1(-ee)
    elif link == "log":
        logq = eta
        q = np.exp(eta)
        with np.errstate(divide="ignore", invalid="ignore"):
            log1mq = np.where(eta < 0, np.log(-np.expm1(np.minimum(eta, 0.0))), -np.inf)
        dq = q
    else:
        raise ValueError(f"unknown link {link!r}; choose from {LINKS}")
    return logq, log1mq, q, dq


def _score_terms(eta: np.ndarray, link: str):
    """``(dlog q/deta, -dlog(1 - q)/deta, Fisher weight per trial)`` without dividing by ``q(1 - q)``."""
    logq, log1mq, q, dq = _log_q_pair(eta, link)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if link == "logit":
            a, b = expit(-eta), q
        elif link == "cloglog":
            a = np.exp(np.minimum(eta, 700.0) - np.exp(np.minimum(eta, 700.0)) - logq)
            b = np.exp(np.minimum(eta, 700.0))
        else:
            a, b = np.ones_like(eta), np.exp(eta - log1mq)
    return a, b, dq * (a + b)


def link_inverse(eta, link: str) -> np.ndarray:
    return _log_q_pair(np.asarray(eta, dtype=float), link)[2]


def link_function(q, link: str) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if link == "logit":
        return np.log(q) - np.log1p(-q)
    if link == "cloglog":
        return np.log(-np.log1p(-q))
    if link == "log":
        return np.log(q)
    raise ValueError(f"unknown link {link!r}; choose from {LINKS}")


def _prep_binomial(X, successes, trials):
    s = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    if np.any(s < 0) or np.any(s > n * (1 + 1e-12) + 1e-12):
        raise ValueError("need 0 <= successes <= trials")
    s = np.minimum(s, n)
    return np.asarray(X, dtype=float), s, n, n > 0


def _xlog(a, logb):
    return np.where(a > 0, a * logb, 0.0)


def binomial_loglik(beta, X, successes, trials, link="logit") -> float:
    """``sum s log q + (n - s) log(1 - q)`` with ``q = link^{-1}(X beta)``."""
    X, s, n, a = _prep_binomial(X, successes, trials)
    logq, log1mq, _, _ = _log_q_pair(X[a] @ beta, link)
    return float(np.sum(_xlog(s[a], logq) + _xlog(n[a] - s[a], log1mq)))


def binomial_score(beta, X, successes, trials, link="logit") -> np.ndarray:
    X, s, n, a = _prep_binomial(X, successes, trials)
    da, db, _ = _score_terms(X[a] @ beta, link)
    return X[a].T @ (s[a] * da - (n[a] - s[a]) * db)


def fit_weighted_binomial(
    X, successes, trials, link="logit", beta0=None, tol=1e-8, max_iter=100
) -> GlmFit:
    """Binomial regression by Fisher scoring with fractional successes and trials.

    If every success count is zero or every one equals its trials the MLE
    lies on the boundary; the fit then runs to ``max_iter`` and comes back
    flagged as not converged.
    """
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}; choose from {LINKS}")
    X, s, n, a = _prep_binomial(X, successes, trials)
    X = _check_design(X, a)
    Xa, sa, na = X[a], s[a], n[a]
    p = X.shape[1]
    pooled = sa.sum() / na.sum()
    boundary = pooled <= 0 or pooled >= 1 or np.all(sa <= 0) or np.all(sa >= na)
    if beta0 is None:
        beta = np.zeros(p)
        icol = _intercept_column(Xa)
        if icol is not None:
            beta[icol] = link_function(np.clip(pooled, 1e-6, 1 - 1e-6), link)
        elif link == "log":
            raise ValueError("log link needs an intercept column or explicit start")
    else:
        beta = np.asarray(beta0, dtype=float).copy()

    def objective(b):
        logq, log1mq, _, _ = _log_q_pair(Xa @ b, link)
        val = np.sum(_xlog(sa, logq) + _xlog(na - sa, log1mq))
        return float(val) if not np.isnan(val) else -np.inf

    def score_hess(b):
        da, db, info = _score_terms(Xa @ b, link)
        g = Xa.T @ (sa * da - (na - sa) * db)
        W = na * info
        H = (Xa * W[:, None]).T @ Xa + 1e-12 * np.eye(p) * max(1.0, W.max(initial=0.0))
        return g, H

    scale = max(1.0, float(na.sum()))
    beta, f, conv, it, gn, msg, trace = _newton_loop(objective, score_hess, beta, tol, max_iter, scale)
    if boundary:
        conv = False
        msg = "successes all zero or all equal to trials; MLE on the boundary"
    return GlmFit(beta, conv, it, f, gn, msg, trace)


# ---------------------------------------------------------------------------
# Dirichlet regression
# ---------------------------------------------------------------------------


@dataclass
class DirichletRegressionFit:
    """Log-link Dirichlet regression: ``eta_d(x) = exp(x . coef[d])``."""

    coef: np.ndarray
    converged: bool
    n_iter: int
    loglik: float
    message: str = ""

    def eta(self, X) -> np.ndarray:
        return np.exp(np.asarray(X, dtype=float) @ self.coef.T)


def _dirichlet_inputs(X, prob_rows, log_prob_rows, weights, eps):
    X = np.asarray(X, dtype=float)
    if (prob_rows is None) == (log_prob_rows is None):
        raise ValueError("pass exactly one of prob_rows and log_prob_rows")
    if prob_rows is not None:
        P = np.asarray(prob_rows, dtype=float)
        sums = P.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-9)
        if bad.size or np.any(P < 0):
            row = bad[0] if bad.size else int(np.argwhere(P < 0)[0, 0])
            raise ValueError(f"row {row} is not on the simplex")
        P = P / sums[:, None]
        L = np.log(np.clip(P, eps, None))
    else:
        L = np.asarray(log_prob_rows, dtype=float)
    w = np.ones(L.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if not np.all(np.isfinite(L[w > 0])):
        row = int(np.flatnonzero(~np.all(np.isfinite(L), axis=1) & (w > 0))[0])
        raise ValueError(f"non-finite log-probability in row {row}")
    return X, L, w


def dirichlet_loglik(coef, X, log_prob_rows, weights=None) -> float:
    """``sum_k w_k [log Gamma(S_k) - sum_d log Gamma(eta_kd) + sum_d (eta_kd - 1) L_kd]``."""
    X = np.asarray(X, dtype=float)
    L = np.asarray(log_prob_rows, dtype=float)
    w = np.ones(L.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    eta = np.exp(X @ np.asarray(coef).T)
    S = eta.sum(axis=1)
    per_row = gammaln(S) - gammaln(eta).sum(axis=1) + ((eta - 1.0) * L).sum(axis=1)
    return float(np.sum(w * per_row))


def dirichlet_score(coef, X, log_prob_rows, weights=None) -> np.ndarray:
    """Gradient with respect to ``coef`` (shape ``(D+1, p)``)."""
    X = np.asarray(X, dtype=float)
    L = np.asarray(log_prob_rows, dtype=float)
    w = np.ones(L.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    eta = np.exp(X @ np.asarray(coef).T)
    S = eta.sum(axis=1, keepdims=True)
    r = w[:, None] * eta * (digamma(S) - digamma(eta) + L)
    return r.T @ X


def _dirichlet_hessian(coef, X, L, w) -> np.ndarray:
    eta = np.exp(X @ coef.T)
    K, p = coef.shape
    S = eta.sum(axis=1)
    tS = polygamma(1, S)
    diag_term = eta * (digamma(S)[:, None] - digamma(eta) + L) - eta**2 * polygamma(1, eta)
    H = np.zeros((K, p, K, p))
    for d in range(K):
        for e in range(d, K):
            c = w * eta[:, d] * eta[:, e] * tS
            if d == e:
                c = c + w * diag_term[:, d]
            block = (X * c[:, None]).T @ X
            H[d, :, e, :] = block
            H[e, :, d, :] = block.T
    return H.reshape(K * p, K * p)


def _mom_start(X, L, w, P=None):
    K = L.shape[1]
    p = X.shape[1]
    wn = w / w.sum()
    M = P if P is not None else np.exp(L) / np.exp(L).sum(axis=1, keepdims=True)
    mean = np.clip(wn @ M, 1e-8, None)
    mean /= mean.sum()
    var = wn @ (M[:, 0] - mean[0]) ** 2
    conc = mean[0] * (1 - mean[0]) / var - 1.0 if var > 0 else np.nan
    if not np.isfinite(conc) or conc <= 0:
        conc = float(K)
    coef = np.zeros((K, p))
    icol = _intercept_column(X[w > 0])
    if icol is not None:
        coef[:, icol] = np.log(conc * mean)
    return coef


def fit_dirichlet_regression(
    X,
    prob_rows=None,
    weights=None,
    log_prob_rows=None,
    coef0=None,
    eps=1e-12,
    tol=1e-8,
    max_iter=200,
) -> DirichletRegressionFit:
    """Weighted Dirichlet regression with log link on every component.

    Parameters
    ----------
    X : ndarray, shape (n, p)
    prob_rows : ndarray, shape (n, D+1), optional
        Observed simplex rows; entries are clipped below at ``eps`` before
        taking logs.
    weights : ndarray, shape (n,), optional
    log_prob_rows : ndarray, shape (n, D+1), optional
        Alternatively, (expected) log-probabilities.  A row may hold the
        weighted average over several observations sharing the same
        covariates, in which case its weight is the total.
    coef0 : ndarray, shape (D+1, p), optional
        Warm start; otherwise method-of-moments intercepts and zero slopes.
    """
    X, L, w = _dirichlet_inputs(X, prob_rows, log_prob_rows, weights, eps)
    active = w > 0
    if prob_rows is not None and active.sum() <= 1:
        raise ValueError("Dirichlet regression needs at least two rows with positive weight")
    X = _check_design(X, active)
    X, L, w = X[active], L[active], w[active]
    K, p = L.shape[1], X.shape[1]
    if coef0 is None:
        P = None if prob_rows is None else np.exp(L)
        coef0 = _mom_start(X, L, w, P)
    scale = max(1.0, float(w.sum()))

    def fun(theta):
        c = theta.reshape(K, p)
        val = dirichlet_loglik(c, X, L, w)
        return -val / scale if np.isfinite(val) else np.inf

    def jac(theta):
        return -dirichlet_score(theta.reshape(K, p), X, L, w).ravel() / scale

    def hess(theta):
        return -_dirichlet_hessian(theta.reshape(K, p), X, L, w) / scale

    res = optimize.minimize(
        fun,
        np.asarray(coef0, dtype=float).ravel(),
        jac=jac,
        hess=hess,
        method="trust-exact",
        options={"gtol": tol, "maxiter": max_iter},
    )
    coef = res.x.reshape(K, p)
    ll = dirichlet_loglik(coef, X, L, w)
    if not np.isfinite(ll):
        raise ValueError("Dirichlet log-likelihood is not finite at the solution")
    grad = np.max(np.abs(jac(res.x)))
    converged = bool(res.success or grad < 1e-5)
    return DirichletRegressionFit(coef, converged, int(res.nit), ll, str(res.message))
