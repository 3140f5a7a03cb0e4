"""Pieces shared by the three EM fitters."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..data import ObservedDataset
from ..glm import fit_weighted_poisson
from ..hmm import ForwardBackwardResult, stationary_distribution

logger = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    """Issued when an inner fit or the EM loop stops without converging."""


@dataclass
class FitOptions:
    """Settings common to the fitters.

    Attributes
    ----------
    g : int
        Number of hidden states.
    tol : float
        Relative-distance threshold that stops the EM loop.
    max_iter : int
    init_iter : int
        EM iterations of the warm-up run on the fully reported window.
    link, link_d1 : str
        Binomial links for lags ``d >= 2`` and ``d = 1`` of the multinomial
        delay model.
    mc_samples : int
        Draws per cell and state in the Monte Carlo E-step of the Dirichlet model.
    estep : {"exact", "mc"}
        Dirichlet E-step: exact series expectations over the reported mass,
        or Monte Carlo averages of ``mc_samples`` posterior draws.
    rescale : bool
        Map expected log-probabilities back to the simplex before the
        Dirichlet M-step.
    seed : int
    workers : int
        Threads used for the per-lag binomial fits.
    """

    g: int = 2
    tol: float = 1e-4
    max_iter: int = 200
    init_iter: int = 10
    link: str = "cloglog"
    link_d1: str = "logit"
    mc_samples: int = 200
    double_after: int | None = None
    estep: str = "exact"
    rescale: bool = False
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.g < 1:
            raise ValueError("g must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.estep not in ("mc", "exact"):
            raise ValueError("estep must be 'mc' or 'exact'")


@dataclass
class EMData:
    """Array view of a dataset as the fitters consume it.

    ``last_lag[t]`` is the largest observable lag of period ``t``; a period
    is censored when it is below ``D``.
    """

    z: np.ndarray
    n: np.ndarray
    exposure: np.ndarray
    X_freq: np.ndarray
    X_delay: np.ndarray
    delay_group: np.ndarray
    last_lag: np.ndarray
    freq_group: np.ndarray = None
    X_freq_unique: np.ndarray = None

    def __post_init__(self):
        uniq, inv = np.unique(self.X_freq, axis=0, return_inverse=True)
        self.X_freq_unique = uniq
        self.freq_group = inv.reshape(-1)

    @classmethod
    def from_dataset(cls, ds: ObservedDataset) -> "EMData":
        X_delay, group = ds.delay_design()
        return cls(
            z=ds.runoff.z.astype(float),
            n=ds.runoff.n_reported.astype(float),
            exposure=ds.exposure,
            X_freq=ds.X_freq,
            X_delay=X_delay,
            delay_group=group,
            last_lag=ds.runoff.last_observed_lag(),
        )

    @property
    def m(self) -> int:
        return self.z.shape[0]

    @property
    def T(self) -> int:
        return self.z.shape[1]

    @property
    def D(self) -> int:
        return self.z.shape[2] - 1

    def lag_mask(self) -> np.ndarray:
        """(T, D+1) mask of observable lags."""
        return np.arange(self.D + 1)[None, :] <= self.last_lag[:, None]

    def complete_window(self) -> "EMData":
        """The leading periods in which every lag up to ``D`` is observed."""
        Tw = int(np.sum(self.last_lag >= self.D))
        if Tw < 1:
            raise ValueError("T must exceed D so that some periods are fully reported")
        sub_group = self.delay_group[:, :Tw]
        used, inv = np.unique(sub_group, return_inverse=True)
        return EMData(
            z=self.z[:, :Tw],
            n=self.n[:, :Tw],
            exposure=self.exposure[:, :Tw],
            X_freq=self.X_freq,
            X_delay=self.X_delay[used],
            delay_group=inv.reshape(self.m, Tw),
            last_lag=self.last_lag[:Tw],
        )


@dataclass
class FitResult:
    """Outcome of an EM fit."""

    kind: str
    params: object
    loglik_trace: list
    n_iter: int
    converged: bool
    n_params: int
    n_obs: int
    u_hat: np.ndarray
    v_hat: np.ndarray
    options: FitOptions
    messages: list = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    @property
    def aic(self) -> float:
        return aic(self.loglik, self.n_params)

    @property
    def bic(self) -> float:
        return bic(self.loglik, self.n_params, self.n_obs)


def aic(loglik: float, k: int) -> float:
    return -2.0 * loglik + 2.0 * k


def bic(loglik: float, k: int, n_obs: int) -> float:
    return -2.0 * loglik + k * np.log(n_obs)


def hmm_param_count(g: int) -> int:
    return (g - 1) + g * (g - 1)


PROB_FLOOR = 1e-12


def _floor_rows(P: np.ndarray) -> np.ndarray:
    # an exact zero would put -inf into the log-space recursions for good
    P = np.maximum(P, PROB_FLOOR)
    return P / P.sum(axis=-1, keepdims=True)


def mstep_hmm(u_hat: np.ndarray, v_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form update: ``pi = u_hat[0]``, ``Gamma`` from summed pair posteriors.

    Probabilities are floored at ``PROB_FLOOR`` and renormalised.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    pi = _floor_rows(u_hat[0] / u_hat[0].sum())
    g = pi.size
    if v_hat.shape[0] == 0:
        return pi, _floor_rows(np.eye(g))
    counts = np.asarray(v_hat, dtype=float).sum(axis=0)
    rows = counts.sum(axis=1)
    gamma = np.empty((g, g))
    for j in range(g):
        if rows[j] > 0:
            gamma[j] = counts[j] / rows[j]
        else:
            warnings.warn(f"state {j} has no transition mass; using a uniform row", ConvergenceWarning)
            gamma[j] = 1.0 / g
    return pi, _floor_rows(gamma)


def relative_distance(old: np.ndarray, new: np.ndarray, floor: float = 1e-12) -> float:
    """``sum |new - old| / |old|``, with ``|old| < floor`` entries contributing ``|new - old|``."""
    old = np.asarray(old, dtype=float)
    new = np.asarray(new, dtype=float)
    if old.shape != new.shape:
        raise ValueError("parameter vectors differ in shape")
    diff = np.abs(new - old)
    small = np.abs(old) < floor
    return float(np.sum(np.where(small, diff, diff / np.where(small, 1.0, np.abs(old)))))


def state_rates(X: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """``lambda_j(x_i) = exp(x_i . theta_j)`` as an (m, g) matrix."""
    return np.exp(X @ theta.T)


def mstep_theta(
    data: EMData,
    nhat: np.ndarray,
    u_hat: np.ndarray,
    theta: np.ndarray,
    offset_scale: np.ndarray | None = None,
    messages: list | None = None,
) -> np.ndarray:
    """Weighted Poisson update of the state frequency coefficients.

    For state ``j`` the objective is ``sum_{i,t} u_tj (nhat_itj log mu - mu)``
    with ``mu = e_it s_it exp(x_i theta_j)``, where ``s`` is an optional
    multiplicative offset (report probabilities in the continuous model).
    Policies sharing a design row are pooled into one weighted observation.
    """
    g = theta.shape[0]
    new = theta.copy()
    eff = data.exposure if offset_scale is None else data.exposure * offset_scale
    T = data.T
    G = data.X_freq_unique.shape[0]
    for j in range(g):
        mass = u_hat[:, j].sum()
        if mass < 1e-6 * T:
            msg = f"state {j} carries negligible posterior weight; its frequency coefficients are frozen"
            warnings.warn(msg, ConvergenceWarning)
            if messages is not None:
                messages.append(msg)
            continue
        y_i = (nhat[:, :, j] * u_hat[None, :, j]).sum(axis=1)
        w_i = (eff * u_hat[None, :, j]).sum(axis=1)
        Y = np.bincount(data.freq_group, weights=y_i, minlength=G)
        W = np.bincount(data.freq_group, weights=w_i, minlength=G)
        ok = W > 0
        resp = np.zeros(G)
        resp[ok] = np.clip(Y[ok] / W[ok], 0.0, None)
        fit = fit_weighted_poisson(data.X_freq_unique, resp, weights=W, beta0=theta[j])
        if not fit.converged and messages is not None:
            messages.append(f"frequency fit for state {j}: {fit.message}")
        new[j] = fit.coef
    return new


def quantile_split(rates: np.ndarray, g: int) -> np.ndarray:
    """Assign each period to one of ``g`` groups by quantiles of its rate."""
    if g == 1:
        return np.zeros(rates.size, dtype=np.int64)
    order = np.argsort(rates, kind="stable")
    labels = np.empty(rates.size, dtype=np.int64)
    for j, chunk in enumerate(np.array_split(order, g)):
        labels[chunk] = j
    return labels


def initial_hmm(labels: np.ndarray, g: int) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed empirical start distribution and transitions of a hard labelling."""
    counts = np.full((g, g), 0.5)
    np.add.at(counts, (labels[:-1], labels[1:]), 1.0)
    gamma = counts / counts.sum(axis=1, keepdims=True)
    pi = np.full(g, 0.5 / g)
    pi[labels[0]] += 0.5
    return pi / pi.sum(), gamma


def initial_theta(data: EMData, labels: np.ndarray, g: int, offset_scale=None) -> np.ndarray:
    """Poisson fit per label group; groups without claims borrow the pooled fit."""
    eff = data.exposure if offset_scale is None else data.exposure * offset_scale
    G = data.X_freq_unique.shape[0]

    def fit(mask):
        Y = np.bincount(data.freq_group, weights=data.n[:, mask].sum(axis=1), minlength=G)
        W = np.bincount(data.freq_group, weights=eff[:, mask].sum(axis=1), minlength=G)
        ok = W > 0
        resp = np.zeros(G)
        resp[ok] = Y[ok] / W[ok]
        return fit_weighted_poisson(data.X_freq_unique, resp, weights=W), Y.sum()

    pooled, _ = fit(np.ones(data.T, dtype=bool))
    theta = np.tile(pooled.coef, (g, 1))
    if g == 1:
        return theta
    icol = np.flatnonzero(np.all(data.X_freq_unique == 1.0, axis=0))
    for j in range(g):
        mask = labels == j
        if not mask.any():
            continue
        Y = data.n[:, mask].sum()
        E = (eff[:, mask] * np.exp(data.X_freq @ pooled.coef)[:, None]).sum()
        if Y > 0 and E > 0 and icol.size:
            theta[j, icol[0]] += np.log(Y / E)
    # keep states distinct even when the split gives equal rates
    if icol.size:
        spread = np.linspace(-0.05, 0.05, g)
        theta[:, icol[0]] += spread * (np.ptp(theta[:, icol[0]]) < 1e-3)
    return theta


def period_rates(data: EMData, offset_scale=None) -> np.ndarray:
    eff = data.exposure if offset_scale is None else data.exposure * offset_scale
    tot = eff.sum(axis=0)
    return np.where(tot > 0, data.n.sum(axis=0) / np.where(tot > 0, tot, 1.0), 0.0)


def canonical_order(pi: np.ndarray, gamma: np.ndarray, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """State permutation sorting states by mean portfolio intensity."""
    mean_rate = state_rates(X, theta).mean(axis=0)
    return np.argsort(mean_rate, kind="stable")


def stationary_weights(gamma: np.ndarray) -> np.ndarray:
    return stationary_distribution(gamma)


def check_posteriors(fb: ForwardBackwardResult) -> None:
    for name in ("log_alpha", "log_beta", "u_hat", "v_hat"):
        arr = getattr(fb, name)
        if np.isnan(arr).any():
            raise FloatingPointError(f"NaN in {name}")
