"""EM for the discrete model with multinomial reporting lags.

Given the hidden state ``j`` of period ``t``, policy ``i`` has
``N_it ~ Poisson(e_it lambda_j(x_i))`` claims whose lags are multinomial
with probabilities ``p(x)``.  Lags ``d > T-1-t`` are not yet observed.
Thinning makes the observed lag counts independent Poissons with means
``e lambda_j p_d``, which is the emission used here, and the unobserved
ones independent Poissons as well, which gives the E-step in closed form.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from ..delay_discrete import q_to_p
from ..glm import GlmFit, fit_weighted_binomial, link_function, link_inverse
from ..hmm import forward_backward
from .common import (
    ConvergenceWarning,
    EMData,
    FitOptions,
    FitResult,
    hmm_param_count,
    initial_hmm,
    initial_theta,
    mstep_hmm,
    mstep_theta,
    period_rates,
    quantile_split,
    relative_distance,
    state_rates,
)

Q_FLOOR = 1e-10


@dataclass
class MultinomialParams:
    """HMM parameters, state frequency coefficients and lag regressions.

    ``delta[d-1]`` holds the coefficients of ``q_d`` for lag ``d = 1..D``;
    lag 1 uses ``link_d1`` and the others ``link``.
    """

    pi: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    delta: np.ndarray
    link: str = "cloglog"
    link_d1: str = "logit"

    @property
    def g(self) -> int:
        return self.pi.size

    @property
    def D(self) -> int:
        return self.delta.shape[0]

    def links(self) -> list[str]:
        return [self.link_d1 if d == 1 else self.link for d in range(1, self.D + 1)]

    def q(self, X_delay: np.ndarray) -> np.ndarray:
        X_delay = np.asarray(X_delay, dtype=float)
        if self.D == 0:
            return np.zeros((X_delay.shape[0], 0))
        eta = X_delay @ self.delta.T
        q = np.column_stack([link_inverse(eta[:, d], lk) for d, lk in enumerate(self.links())])
        # separated lag fits must not give exact zeros: a later claim at that lag would be impossible
        return np.clip(q, Q_FLOOR, 1.0 - Q_FLOOR)

    def delay_probs(self, X_delay: np.ndarray) -> np.ndarray:
        return q_to_p(self.q(X_delay))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.pi, self.gamma.ravel(), self.theta.ravel(), self.delta.ravel()])

    def n_params(self) -> int:
        return hmm_param_count(self.g) + self.theta.size + self.delta.size

    def permuted(self, order) -> "MultinomialParams":
        order = np.asarray(order)
        return MultinomialParams(
            self.pi[order], self.gamma[np.ix_(order, order)], self.theta[order],
            self.delta.copy(), self.link, self.link_d1,
        )


@dataclass
class MultinomialEStep:
    loglik: float
    u_hat: np.ndarray
    v_hat: np.ndarray
    nhat: np.ndarray
    zhat: np.ndarray
    log_alpha: np.ndarray
    log_beta: np.ndarray
    log_emis: np.ndarray


def multinomial_log_emissions(data: EMData, params: MultinomialParams):
    """Per-period, per-state log probability of the observed lag counts.

    Returns ``(log_emis, lam, P, pr)`` with ``lam`` the (m, g) rates, ``P``
    the (m, T, D+1) lag probabilities and ``pr`` the reported mass.
    """
    lam = state_rates(data.X_freq, params.theta)
    P = params.delay_probs(data.X_delay)[data.delay_group]
    mask = data.lag_mask()
    pr = np.sum(P * mask[None], axis=2)
    mu = data.exposure[:, :, None] * lam[:, None, :]
    zobs = data.z * mask[None]
    with np.errstate(divide="ignore", invalid="ignore"):
        lag_part = np.sum(xlogy(zobs, P) - gammaln(zobs + 1.0), axis=(0, 2))
        state_part = np.sum(xlogy(data.n[:, :, None], mu) - mu * pr[:, :, None], axis=0)
    return state_part + lag_part[:, None], lam, P, pr


def estep_expectations_mm(data: EMData, params: MultinomialParams) -> MultinomialEStep:
    """Forward-backward plus expected total counts and expected lag counts."""
    log_emis, lam, P, pr = multinomial_log_emissions(data, params)
    fb = forward_backward(log_emis, params.pi, params.gamma)
    mu = data.exposure[:, :, None] * lam[:, None, :]
    mask = data.lag_mask()
    # fully observed periods have no missing mass (avoid 1 - sum(p) round-off)
    missing = np.where(mask.all(axis=1)[None, :], 0.0, np.clip(1.0 - pr, 0.0, 1.0))
    nhat = data.n[:, :, None] + mu * missing[:, :, None]
    expected_mu = np.einsum("itj,tj->it", mu, fb.u_hat)
    zhat = np.where(mask[None], data.z, expected_mu[:, :, None] * P)
    return MultinomialEStep(fb.loglik, fb.u_hat, fb.v_hat, nhat, zhat, fb.log_alpha, fb.log_beta, log_emis)


def mstep_delta(
    data: EMData,
    zhat: np.ndarray,
    delta: np.ndarray,
    links: list[str],
    workers: int = 1,
    messages: list | None = None,
) -> np.ndarray:
    """Per-lag binomial regressions on expected counts, pooled by delay-design row."""
    G = data.X_delay.shape[0]
    groups = data.delay_group.ravel()
    flat = zhat.reshape(-1, zhat.shape[2])
    sums = np.column_stack([np.bincount(groups, weights=flat[:, d], minlength=G) for d in range(flat.shape[1])])
    cum = np.cumsum(sums, axis=1)

    def one(d):
        try:
            fit = fit_weighted_binomial(
                data.X_delay, sums[:, d], cum[:, d], link=links[d - 1], beta0=delta[d - 1]
            )
        except ValueError as exc:
            fit = GlmFit(delta[d - 1].copy(), False, 0, float("nan"), float("nan"), str(exc))
        return d, fit

    if workers > 1 and len(links) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fits = list(pool.map(one, range(1, len(links) + 1)))
    else:
        fits = [one(d) for d in range(1, len(links) + 1)]
    new = delta.copy()
    for d, fit in fits:
        if np.all(np.isfinite(fit.coef)):
            new[d - 1] = fit.coef
        if not fit.converged and messages is not None:
            messages.append(f"lag {d} binomial fit: {fit.message}")
    return new


def initial_delta(data: EMData, links: list[str], zhat=None) -> np.ndarray:
    """Binomial fits on (possibly expected) lag counts from zero coefficients."""
    z = data.z if zhat is None else zhat
    p = data.X_delay.shape[1]
    delta = np.zeros((len(links), p))
    G = data.X_delay.shape[0]
    flat = z.reshape(-1, z.shape[2])
    sums = np.column_stack([np.bincount(data.delay_group.ravel(), weights=flat[:, d], minlength=G) for d in range(flat.shape[1])])
    cum = np.cumsum(sums, axis=1)
    for d in range(1, len(links) + 1):
        ok = cum[:, d] > 0
        if not ok.any():
            icol = np.flatnonzero(np.all(data.X_delay == 1.0, axis=0))
            if icol.size:
                delta[d - 1, icol[0]] = link_function(1e-6, links[d - 1])
            continue
        X = data.X_delay[ok]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                fit = fit_weighted_binomial(X, sums[ok, d], cum[ok, d], link=links[d - 1])
                coef = fit.coef
            except ValueError:
                # too few informative rows for the full design: pooled intercept
                coef = np.zeros(p)
                icol = np.flatnonzero(np.all(data.X_delay == 1.0, axis=0))
                pooled = np.clip(sums[ok, d].sum() / cum[ok, d].sum(), 1e-6, 1 - 1e-6)
                if icol.size:
                    coef[icol[0]] = link_function(pooled, links[d - 1])
        if np.all(np.isfinite(coef)):
            delta[d - 1] = coef
    return delta


def _window_start(data: EMData, options: FitOptions) -> MultinomialParams:
    g = options.g
    links = [options.link_d1 if d == 1 else options.link for d in range(1, data.D + 1)]
    delta = initial_delta(data, links)
    labels = quantile_split(period_rates(data), g)
    pi, gamma = initial_hmm(labels, g)
    theta = initial_theta(data, labels, g)
    return MultinomialParams(pi, gamma, theta, delta, options.link, options.link_d1)


def initialize_mm(data: EMData, options: FitOptions) -> MultinomialParams:
    """Start values from the fully reported window ``t <= T-1-D``.

    Lag regressions are fitted on the complete lag counts, periods are split
    into ``g`` groups by quantiles of their claim rates to seed the states,
    and a short EM run on the window refines everything.
    """
    window = data.complete_window()
    start = _window_start(window, options)
    if options.g == 1 or options.init_iter <= 0:
        return start
    short = FitOptions(**{**options.__dict__, "max_iter": options.init_iter})
    return _run_em(window, start, short).params


def _run_em(data: EMData, params: MultinomialParams, options: FitOptions) -> FitResult:
    messages: list = []
    es = estep_expectations_mm(data, params)
    trace = [es.loglik]
    converged = False
    n_iter = 0
    for n_iter in range(1, options.max_iter + 1):
        pi, gamma = mstep_hmm(es.u_hat, es.v_hat)
        theta = mstep_theta(data, es.nhat, es.u_hat, params.theta, messages=messages)
        delta = mstep_delta(data, es.zhat, params.delta, params.links(), options.workers, messages)
        new = MultinomialParams(pi, gamma, theta, delta, params.link, params.link_d1)
        es = estep_expectations_mm(data, new)
        trace.append(es.loglik)
        dist = relative_distance(params.vector(), new.vector())
        params = new
        if dist < options.tol:
            converged = True
            break
    if not converged:
        warnings.warn("EM stopped at max_iter before reaching the distance threshold", ConvergenceWarning)
    return FitResult(
        kind="mm",
        params=params,
        loglik_trace=trace,
        n_iter=n_iter,
        converged=converged,
        n_params=params.n_params(),
        n_obs=data.m * data.T,
        u_hat=es.u_hat,
        v_hat=es.v_hat,
        options=options,
        messages=sorted(set(messages)),
    )


def fit_mm(data: EMData, options: FitOptions | None = None, init: MultinomialParams | None = None) -> FitResult:
    """Fit the multinomial-delay model by EM."""
    options = options or FitOptions()
    if data.T <= data.D:
        raise ValueError("T must exceed D so that some periods are fully reported")
    params = init if init is not None else initialize_mm(data, options)
    return _run_em(data, params, options)


def single_state_loglik(data: EMData, theta: np.ndarray, delta: np.ndarray, links: list[str]) -> float:
    """Observed log-likelihood of the one-state model, computed directly."""
    lam = np.exp(data.X_freq @ theta)
    params = MultinomialParams(np.ones(1), np.ones((1, 1)), theta[None], delta, links[-1] if links else "cloglog", links[0] if links else "logit")
    P = params.delay_probs(data.X_delay)[data.delay_group]
    mask = data.lag_mask()
    mean = data.exposure[:, :, None] * lam[:, None, None] * P
    z = data.z
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = xlogy(z, mean) - mean - gammaln(z + 1.0)
    return float(np.sum(np.where(mask[None], terms, 0.0)))


__all__ = [
    "MultinomialParams",
    "estep_expectations_mm",
    "fit_mm",
    "initialize_mm",
    "mstep_delta",
    "multinomial_log_emissions",
    "single_state_loglik",
]
