"""Two-step fit of the continuous-time model.

Step one fits the log-logistic delay regression to the reported claims.
Step two freezes it, computes for every policy and period the average
probability that a claim occurring in the period is reported by the
valuation date, and runs EM for the hidden-Markov Poisson model of the
reported counts, whose means are ``e lambda_j(x) * R``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from ..data import ObservedDataset
from ..delay_continuous import (
    DAY_FEATURES,
    LogLogisticDelayModel,
    delay_params_count,
    fit_dataset_delay,
    report_probability_integrals,
)
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


@dataclass
class ContinuousParams:
    pi: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    delay: LogLogisticDelayModel | None

    @property
    def g(self) -> int:
        return self.pi.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.pi, self.gamma.ravel(), self.theta.ravel()])

    def n_params(self) -> int:
        k = hmm_param_count(self.g) + self.theta.size
        return k + (delay_params_count(self.delay) if self.delay is not None else 0)

    def permuted(self, order) -> "ContinuousParams":
        order = np.asarray(order)
        return ContinuousParams(self.pi[order], self.gamma[np.ix_(order, order)], self.theta[order], self.delay)


def reported_log_emissions(data: EMData, theta: np.ndarray, report_probs: np.ndarray) -> np.ndarray:
    lam = state_rates(data.X_freq, theta)
    mu = (data.exposure * report_probs)[:, :, None] * lam[:, None, :]
    n = data.n[:, :, None]
    with np.errstate(divide="ignore"):
        return np.sum(xlogy(n, mu) - mu - gammaln(n + 1.0), axis=0)


def initialize_cm(data: EMData, report_probs: np.ndarray, options: FitOptions) -> ContinuousParams:
    """Quantile split of the reporting-adjusted period rates."""
    labels = quantile_split(period_rates(data, report_probs), options.g)
    pi, gamma = initial_hmm(labels, options.g)
    theta = initial_theta(data, labels, options.g, offset_scale=report_probs)
    return ContinuousParams(pi, gamma, theta, None)


def fit_reported_hmm(
    data: EMData,
    report_probs: np.ndarray,
    options: FitOptions,
    init: ContinuousParams | None = None,
    delay: LogLogisticDelayModel | None = None,
) -> FitResult:
    """EM for the Poisson hidden-Markov model of reported counts with fixed report probabilities."""
    params = init if init is not None else initialize_cm(data, report_probs, options)
    params = ContinuousParams(params.pi, params.gamma, params.theta, delay)
    messages: list = []
    nhat = np.repeat(data.n[:, :, None], params.g, axis=2)

    def estep(p):
        return forward_backward(reported_log_emissions(data, p.theta, report_probs), p.pi, p.gamma)

    fb = estep(params)
    trace = [fb.loglik]
    converged = False
    n_iter = 0
    for n_iter in range(1, options.max_iter + 1):
        pi, gamma = mstep_hmm(fb.u_hat, fb.v_hat)
        theta = mstep_theta(data, nhat, fb.u_hat, params.theta, offset_scale=report_probs, messages=messages)
        new = ContinuousParams(pi, gamma, theta, delay)
        fb = estep(new)
        trace.append(fb.loglik)
        dist = relative_distance(params.vector(), new.vector())
        params = new
        if dist < options.tol:
            converged = True
            break
    if not converged:
        warnings.warn("EM stopped at max_iter before reaching the distance threshold", ConvergenceWarning)
    return FitResult(
        kind="cm",
        params=params,
        loglik_trace=trace,
        n_iter=n_iter,
        converged=converged,
        n_params=params.n_params(),
        n_obs=data.m * data.T,
        u_hat=fb.u_hat,
        v_hat=fb.v_hat,
        options=options,
        messages=sorted(set(messages)),
    )


def fit_cm(
    dataset: ObservedDataset,
    options: FitOptions | None = None,
    delay_mode: str = "truncated",
    delay_model: LogLogisticDelayModel | None = None,
    day_features=DAY_FEATURES,
    data: EMData | None = None,
    init: ContinuousParams | None = None,
) -> FitResult:
    """Two-step fit: delay regression, then EM for the frequency model.

    ``delay_mode="truncated"`` uses the right-truncated likelihood of the
    reported claims; ``"oracle"`` fits the plain likelihood to all claims
    including those reported after the valuation date.
    """
    options = options or FitOptions()
    if delay_mode not in ("truncated", "oracle"):
        raise ValueError("delay_mode must be 'truncated' or 'oracle'")
    if delay_model is None:
        delay_model = fit_dataset_delay(dataset, truncated=delay_mode == "truncated", day_kinds=day_features)
    R = report_probability_integrals(delay_model, dataset)
    data = data if data is not None else EMData.from_dataset(dataset)
    result = fit_reported_hmm(data, R, options, init=init, delay=delay_model)
    if not delay_model.converged:
        result.messages.append(f"delay regression: {delay_model.message}")
    return result
