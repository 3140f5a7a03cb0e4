"""Monte Carlo EM for the discrete model with Dirichlet-multinomial reporting lags.

Each policy-period cell draws its own lag distribution
``p_it ~ Dirichlet(eta(x))`` with ``log eta_d(x) = x . coef[d]``.  For fully
reported cells the posterior of ``p`` is Dirichlet.  For cells whose late
lags are censored the Poisson count tilts the reported mass
``X = p_0 + ... + p_k`` by ``exp(-e lambda_j X)``, while, given ``X``, the
observed and censored blocks remain Dirichlet.  The E-step therefore only
needs expectations over the one-dimensional law of ``X``; these come from
Monte Carlo draws (``estep="mc"``) or from the series representation of the
tilted beta law (``estep="exact"``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import betaln, digamma, gammaln, xlogy

from ..delay_discrete import (
    dirichlet_multinomial_loglik,
    sample_tilted_beta,
    tilted_beta_log_normalizer,
    tilted_beta_moments,
)
from ..glm import fit_dirichlet_regression
from ..hmm import forward_backward
from .common import (
    ConvergenceWarning,
    EMData,
    FitOptions,
    FitResult,
    hmm_param_count,
    mstep_hmm,
    mstep_theta,
    relative_distance,
    state_rates,
)
from .multinomial import MultinomialParams, _window_start


@dataclass
class DirichletParams:
    """HMM parameters, state frequency coefficients and Dirichlet regression coefficients."""

    pi: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    coef: np.ndarray

    @property
    def g(self) -> int:
        return self.pi.size

    @property
    def D(self) -> int:
        return self.coef.shape[0] - 1

    def eta(self, X_delay) -> np.ndarray:
        return np.exp(np.asarray(X_delay, dtype=float) @ self.coef.T)

    def delay_probs(self, X_delay) -> np.ndarray:
        eta = self.eta(X_delay)
        return eta / eta.sum(axis=1, keepdims=True)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.pi, self.gamma.ravel(), self.theta.ravel(), self.coef.ravel()])

    def n_params(self) -> int:
        return hmm_param_count(self.g) + self.theta.size + self.coef.size

    def permuted(self, order) -> "DirichletParams":
        order = np.asarray(order)
        return DirichletParams(self.pi[order], self.gamma[np.ix_(order, order)], self.theta[order], self.coef.copy())


@dataclass
class DirichletEStep:
    loglik: float
    u_hat: np.ndarray
    v_hat: np.ndarray
    nhat: np.ndarray
    log_p: np.ndarray
    log_emis: np.ndarray


def _cell_blocks(data: EMData, eta_cells: np.ndarray):
    """Observed/censored Dirichlet mass per cell: ``A``, ``B`` of shape (m, T)."""
    mask = data.lag_mask()
    A = np.sum(eta_cells * mask[None], axis=2)
    B = np.sum(eta_cells * ~mask[None], axis=2)
    return A, B, mask


def dirichlet_log_emissions(data: EMData, params: DirichletParams):
    """Exact per-period, per-state log probability of the observed lag counts.

    A cell contributes ``P(N^r = n | state) * P(z | n)``.  The second factor
    is Dirichlet-multinomial over the observed lags and does not depend on
    the state.  The first is the Poisson law mixed over the Dirichlet prior
    of the reported mass.
    """
    lam = state_rates(data.X_freq, params.theta)
    eta_cells = params.eta(data.X_delay)[data.delay_group]
    A, B, mask = _cell_blocks(data, eta_cells)
    mu = data.exposure[:, :, None] * lam[:, None, :]
    n = data.n
    lag_part = np.zeros(data.T)
    for t in range(data.T):
        k = data.last_lag[t]
        lag_part[t] = np.sum(dirichlet_multinomial_loglik(data.z[:, t, : k + 1], eta_cells[:, t, : k + 1]))
    state_part = np.empty((data.T, params.g))
    censored = B > 0
    for j in range(params.g):
        with np.errstate(divide="ignore"):
            base = xlogy(n, mu[:, :, j]) - gammaln(n + 1.0)
        tilt = np.where(censored, 0.0, -mu[:, :, j])
        ci, ct = np.nonzero(censored & (data.exposure > 0))
        if ci.size:
            a, b = A[ci, ct] + n[ci, ct], B[ci, ct]
            tilt[ci, ct] = (
                betaln(a, b) - betaln(A[ci, ct], b) + tilted_beta_log_normalizer(a, b, mu[ci, ct, j])
            )
        state_part[:, j] = np.sum(base + tilt, axis=0)
    return state_part + lag_part[:, None], lam, eta_cells, A, B, mask, mu


def estep_expectations_dm(
    data: EMData,
    params: DirichletParams,
    method: str = "exact",
    n_samples: int = 200,
    rng: np.random.Generator | None = None,
) -> DirichletEStep:
    """Forward-backward plus expected total counts and expected log lag probabilities.

    ``log_p`` holds, per cell, the expected log-probabilities averaged over
    the smoothed state probabilities of its period.
    """
    log_emis, lam, eta_cells, A, B, mask, mu = dirichlet_log_emissions(data, params)
    fb = forward_backward(log_emis, params.pi, params.gamma)
    g = params.g
    n = data.n
    z = data.z
    nhat = np.repeat(n[:, :, None], g, axis=2)

    # state-independent Dirichlet parts of E[log p]
    n_obs = np.sum(z * mask[None], axis=2)
    dig_obs = digamma(eta_cells + z) - digamma(A + n_obs)[:, :, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        dig_cens = digamma(eta_cells) - digamma(np.where(B > 0, B, 1.0))[:, :, None]
    base = np.where(mask[None], dig_obs, dig_cens)

    censored = (B > 0) & (data.exposure > 0)
    ci, ct = np.nonzero(censored)
    mlog = np.zeros((data.m, data.T, g))
    mlog1m = np.zeros((data.m, data.T, g))
    if ci.size:
        a = A[ci, ct] + n[ci, ct]
        b = B[ci, ct]
        for j in range(g):
            lam_j = mu[ci, ct, j]
            if method == "exact":
                mom = tilted_beta_moments(a, b, lam_j)
                mean_x, el, el1m = mom.mean, mom.mean_log, mom.mean_log1m
            elif method == "mc":
                x = sample_tilted_beta(a, b, lam_j, n_samples, rng)
                x = np.clip(x, 1e-300, 1.0 - 1e-16)
                mean_x = x.mean(axis=1)
                el = np.log(x).mean(axis=1)
                el1m = np.log1p(-x).mean(axis=1)
            else:
                raise ValueError(f"unknown E-step method {method!r}")
            nhat[ci, ct, j] = n[ci, ct] + lam_j * (1.0 - mean_x)
            mlog[ci, ct, j] = el
            mlog1m[ci, ct, j] = el1m
    u = fb.u_hat[None, :, :]
    el_cell = np.sum(mlog * u, axis=2)
    el1m_cell = np.sum(mlog1m * u, axis=2)
    shift = np.where(mask[None], el_cell[:, :, None], el1m_cell[:, :, None])
    log_p = base + np.where(censored[:, :, None], shift, 0.0)
    return DirichletEStep(fb.loglik, fb.u_hat, fb.v_hat, nhat, log_p, log_emis)


def mstep_dirichlet(data: EMData, log_p: np.ndarray, coef: np.ndarray, rescale: bool = False):
    """Dirichlet regression on per-cell expected log-probabilities, pooled by design row."""
    active = data.exposure > 0
    L = log_p
    if rescale:
        P = np.exp(L)
        L = np.log(np.clip(P / P.sum(axis=2, keepdims=True), 1e-12, None))
    G = data.X_delay.shape[0]
    groups = data.delay_group[active]
    W = np.bincount(groups, minlength=G).astype(float)
    sums = np.column_stack(
        [np.bincount(groups, weights=L[active][:, d], minlength=G) for d in range(L.shape[2])]
    )
    ok = W > 0
    Lbar = np.zeros_like(sums)
    Lbar[ok] = sums[ok] / W[ok, None]
    return fit_dirichlet_regression(data.X_delay, log_prob_rows=Lbar, weights=W, coef0=coef)


def _eta_from_probs(X_delay: np.ndarray, probs: np.ndarray, conc: float, weights: np.ndarray) -> np.ndarray:
    """Coefficients whose implied ``eta`` best matches ``conc * probs`` on the log scale."""
    target = np.log(conc * np.clip(probs, 1e-12, None))
    w = np.sqrt(np.clip(weights, 1e-12, None))[:, None]
    coef, *_ = np.linalg.lstsq(X_delay * w, target * w, rcond=None)
    return coef.T


def _profile_concentration(data: EMData, probs_cells: np.ndarray) -> float:
    """Concentration maximising the Dirichlet-multinomial likelihood of complete cells."""
    use = data.n > 0
    if not use.any():
        return 100.0
    z = data.z[use]
    P = probs_cells[use]

    def neg(logc):
        return -np.sum(dirichlet_multinomial_loglik(z, np.exp(logc) * np.clip(P, 1e-12, None)))

    res = optimize.minimize_scalar(neg, bounds=(np.log(0.5), np.log(1e6)), method="bounded")
    return float(np.exp(res.x))


def initialize_dm(data: EMData, options: FitOptions) -> DirichletParams:
    """Start values from the fully reported window.

    Multinomial-type start for the states and lag means, a profiled
    concentration for the Dirichlet scale, then a short EM run on the window
    where the E-step is conjugate and exact.
    """
    window = data.complete_window()
    mm: MultinomialParams = _window_start(window, options)
    probs = mm.delay_probs(window.X_delay)
    conc = _profile_concentration(window, probs[window.delay_group])
    W = np.bincount(window.delay_group.ravel(), minlength=window.X_delay.shape[0]).astype(float)
    coef_w = _eta_from_probs(window.X_delay, probs, conc, W)
    start = DirichletParams(mm.pi, mm.gamma, mm.theta, coef_w)
    if options.init_iter > 0:
        short = FitOptions(**{**options.__dict__, "max_iter": options.init_iter, "estep": "exact"})
        start = _run_em(window, start, short).params
    return start


def _run_em(data: EMData, params: DirichletParams, options: FitOptions) -> FitResult:
    messages: list = []

    def estep(p, it):
        n_samples = options.mc_samples
        if options.double_after is not None and it > options.double_after:
            n_samples *= 2
        rng = np.random.default_rng(np.random.SeedSequence([options.seed, it]))
        return estep_expectations_dm(data, p, options.estep, n_samples, rng)

    es = estep(params, 0)
    trace = [es.loglik]
    converged = False
    n_iter = 0
    for n_iter in range(1, options.max_iter + 1):
        pi, gamma = mstep_hmm(es.u_hat, es.v_hat)
        theta = mstep_theta(data, es.nhat, es.u_hat, params.theta, messages=messages)
        dfit = mstep_dirichlet(data, es.log_p, params.coef, options.rescale)
        if not dfit.converged:
            messages.append(f"Dirichlet regression: {dfit.message}")
        new = DirichletParams(pi, gamma, theta, dfit.coef)
        es = estep(new, n_iter)
        trace.append(es.loglik)
        dist = relative_distance(params.vector(), new.vector())
        params = new
        if dist < options.tol:
            converged = True
            break
    if not converged:
        warnings.warn("MCEM stopped at max_iter before reaching the distance threshold", ConvergenceWarning)
    return FitResult(
        kind="dm",
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


def fit_dm(data: EMData, options: FitOptions | None = None, init: DirichletParams | None = None) -> FitResult:
    """Fit the Dirichlet-multinomial delay model by (Monte Carlo) EM."""
    options = options or FitOptions()
    if data.T <= data.D:
        raise ValueError("T must exceed D so that some periods are fully reported")
    params = init if init is not None else initialize_dm(data, options)
    return _run_em(data, params, options)
