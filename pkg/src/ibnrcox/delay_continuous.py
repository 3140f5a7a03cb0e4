"""Log-logistic reporting-delay regression in continuous (daily) time.

The delay ``U`` of a claim has CDF ``F(u) = 1 / (1 + (u / alpha)^-beta)`` with
``log alpha = x . b`` (accelerated failure time form) and a common shape
``beta``.  Regressors are the policy design row plus day-of-occurrence
features.  Claims seen at the valuation date ``tau`` are right-truncated:
only delays below ``tau - t`` can have been observed.

Day conventions: a claim occurring on day ``o`` occurs at ``t = o + 0.5``
and one reported on day ``r`` is taken as reported at the end of that day,
so ``u = r - o + 0.5``.  A claim with ``r < tau`` then satisfies
``u <= tau - t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit

from .data import ObservedDataset, as_days

DAY_FEATURES = ("month", "weekday")


@dataclass
class DayFeatures:
    """Dummy coding of the occurrence day (month of year, day of week)."""

    kinds: tuple = DAY_FEATURES
    month_levels: list = field(default_factory=list)
    weekday_levels: list = field(default_factory=list)

    @staticmethod
    def _month(days):
        return as_days(days).astype("datetime64[M]").astype(np.int64) % 12 + 1

    @staticmethod
    def _weekday(days):
        # 1970-01-01 was a Thursday; Monday = 0
        return (as_days(days).astype(np.int64) + 3) % 7

    def fit(self, days) -> "DayFeatures":
        if "month" in self.kinds:
            self.month_levels = [int(v) for v in np.unique(self._month(days))[1:]]
        if "weekday" in self.kinds:
            self.weekday_levels = [int(v) for v in np.unique(self._weekday(days))[1:]]
        return self

    def transform(self, days) -> np.ndarray:
        blocks = [np.zeros((np.size(days), 0))]
        if self.month_levels:
            m = self._month(days)
            blocks.append((m[:, None] == np.asarray(self.month_levels)[None, :]).astype(float))
        if self.weekday_levels:
            w = self._weekday(days)
            blocks.append((w[:, None] == np.asarray(self.weekday_levels)[None, :]).astype(float))
        return np.hstack(blocks)

    def names(self) -> list[str]:
        return [f"month={v}" for v in self.month_levels] + [
            f"weekday={v}" for v in self.weekday_levels
        ]

    @property
    def width(self) -> int:
        return len(self.month_levels) + len(self.weekday_levels)


@dataclass
class LogLogisticDelayModel:
    """Fitted log-logistic delay regression.

    Attributes
    ----------
    coef : ndarray
        Log-scale coefficients: policy block first, then day features.
    log_shape : float
        ``log beta``.
    n_policy_features : int
    day_features : DayFeatures
    """

    coef: np.ndarray
    log_shape: float
    n_policy_features: int
    day_features: DayFeatures
    converged: bool = True
    loglik: float = float("nan")
    truncated: bool = True
    message: str = ""

    @property
    def shape(self) -> float:
        return float(np.exp(self.log_shape))

    def log_scale(self, X_policy, days) -> np.ndarray:
        """``log alpha`` for paired policy rows and occurrence days."""
        X_policy = np.atleast_2d(np.asarray(X_policy, dtype=float))
        return (
            X_policy @ self.coef[: self.n_policy_features]
            + self.day_features.transform(np.atleast_1d(days)) @ self.coef[self.n_policy_features :]
        )

    def cdf(self, u, X_policy, days) -> np.ndarray:
        return loglogistic_cdf(u, np.exp(self.log_scale(X_policy, days)), self.shape)


def loglogistic_cdf(u, scale, shape) -> np.ndarray:
    """``1 / (1 + (u / scale)^-shape)``; zero for ``u <= 0``."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        z = shape * (np.log(np.where(u > 0, u, 1.0)) - np.log(scale))
    return np.where(u > 0, expit(z), 0.0)


def delay_cdf(model: LogLogisticDelayModel, u, X_policy, day) -> np.ndarray:
    return model.cdf(u, X_policy, day)


def _softplus(x):
    return np.logaddexp(0.0, x)


def truncated_loglik(params, X, u, w=None):
    """Log-likelihood and gradient; ``w`` holds truncation points (``None`` = untruncated)."""
    b, s = params[:-1], params[-1]
    beta = np.exp(s)
    xb = X @ b
    logu = np.log(u)
    z = beta * (logu - xb)
    ll = np.sum(s + z - logu - 2.0 * _softplus(z))
    dz = 1.0 - 2.0 * expit(z)
    grad_b = X.T @ (dz * -beta)
    grad_s = np.sum(1.0 + dz * z)
    if w is not None:
        zw = beta * (np.log(w) - xb)
        ll -= np.sum(-_softplus(-zw))
        sw = expit(-zw)
        grad_b -= X.T @ (sw * -beta)
        grad_s -= np.sum(sw * zw)
    return float(ll), np.append(grad_b, grad_s)


def fit_truncated_delay(
    u,
    X,
    truncation=None,
    n_policy_features: int | None = None,
    day_features: DayFeatures | None = None,
    max_iter: int = 500,
) -> LogLogisticDelayModel:
    """Maximum-likelihood log-logistic regression, optionally right-truncated.

    Parameters
    ----------
    u : ndarray
        Observed delays in days (positive).
    X : ndarray, shape (n, p)
        Regressors on the log scale, intercept included.
    truncation : ndarray, optional
        Per-claim truncation point ``tau - t``; ``None`` fits the plain
        likelihood (for complete data).
    """
    u = np.asarray(u, dtype=float)
    X = np.asarray(X, dtype=float)
    if u.size < 2:
        raise ValueError("need at least two observed delays")
    if np.any(u <= 0):
        raise ValueError("delays must be positive")
    w = None
    if truncation is not None:
        w = np.asarray(truncation, dtype=float)
        if np.any(u > w * (1 + 1e-12)):
            raise ValueError("an observed delay exceeds its truncation point")
    p = X.shape[1]
    x0 = np.zeros(p + 1)
    const = np.flatnonzero(np.all(X == 1.0, axis=0))
    if const.size:
        x0[const[0]] = np.median(np.log(u))
    n = u.size

    def fun(theta):
        ll, g = truncated_loglik(theta, X, u, w)
        return -ll / n, -g / n

    res = optimize.minimize(fun, x0, jac=True, method="BFGS", options={"gtol": 1e-8, "maxiter": max_iter})
    gmax = float(np.max(np.abs(res.jac)))
    ll, _ = truncated_loglik(res.x, X, u, w)
    npf = p if n_policy_features is None else n_policy_features
    return LogLogisticDelayModel(
        coef=res.x[:-1],
        log_shape=float(res.x[-1]),
        n_policy_features=npf,
        day_features=day_features or DayFeatures(kinds=()),
        converged=bool(res.success or gmax < 1e-6),
        loglik=ll,
        truncated=w is not None,
        message=str(res.message),
    )


def claim_delay_data(dataset: ObservedDataset, claims=None):
    """Delays, truncation points and occurrence days of reported claims."""
    claims = dataset.claims if claims is None else claims
    occ = as_days(claims["occurrence_date"].to_numpy())
    rep = as_days(claims["report_date"].to_numpy())
    tau = dataset.grid.valuation_date
    u = (rep - occ).astype(float) + 0.5
    w = (tau - occ).astype(float) - 0.5
    pol = claims["policy_index"].to_numpy(np.int64)
    return u, w, occ, pol


def fit_dataset_delay(
    dataset: ObservedDataset,
    truncated: bool = True,
    day_kinds=DAY_FEATURES,
) -> LogLogisticDelayModel:
    """Fit the delay regression on a dataset's reported claims.

    With ``truncated=False`` the late claims held out as truth are added and
    the plain likelihood is used, which mimics fitting with full hindsight.
    """
    claims = dataset.claims
    if not truncated:
        import pandas as pd

        claims = pd.concat([dataset.claims, dataset.late_claims], ignore_index=True)
    u, w, occ, pol = claim_delay_data(dataset, claims)
    feats = DayFeatures(kinds=tuple(day_kinds)).fit(occ)
    X = np.hstack([dataset.X_freq[pol], feats.transform(occ)])
    return fit_truncated_delay(
        u,
        X,
        truncation=w if truncated else None,
        n_policy_features=dataset.X_freq.shape[1],
        day_features=feats,
    )


def _period_average(model, X_policy, grid, upper_of_day, refine: int = 1):
    """Per-period average over days (and sub-day points) of ``sum sign * F(upper - t)``.

    ``upper_of_day`` maps the array of days to a list of ``(sign, upper)``
    pairs, ``upper`` being a time in days since the epoch.
    """
    days = np.arange(grid.boundaries[0], grid.boundaries[-1])
    period = np.repeat(np.arange(grid.T), grid.period_days)
    log_scale_pol = np.asarray(X_policy, dtype=float) @ model.coef[: model.n_policy_features]
    day_part = model.day_features.transform(days) @ model.coef[model.n_policy_features :]
    base = days.astype(np.int64).astype(float)
    acc = np.zeros((log_scale_pol.size, days.size))
    for j in range(refine):
        t = base + (j + 0.5) / refine
        scale = np.exp(log_scale_pol[:, None] + day_part[None, :])
        for sign, upper in upper_of_day(days):
            acc += sign * loglogistic_cdf((upper - t)[None, :], scale, model.shape)
    acc /= refine
    sums = np.zeros((log_scale_pol.size, grid.T))
    np.add.at(sums.T, period, acc.T)
    return sums / grid.period_days[None, :]


def report_probability_integrals(model: LogLogisticDelayModel, dataset: ObservedDataset, refine: int = 1) -> np.ndarray:
    """Per-policy, per-period average probability that a claim is reported by ``tau``.

    Entry ``(i, l)`` is ``(1 / |period l|) * integral over period l of F(tau - t) dt``,
    evaluated by the midpoint rule on ``refine`` points per day.
    """
    tau = float(dataset.grid.valuation_date.astype(np.int64))
    return _period_average(
        model, dataset.X_freq, dataset.grid, lambda days: [(1.0, np.full(days.size, tau))], refine
    )


def window_report_probability(model: LogLogisticDelayModel, u_low, u_high, X_policy, day) -> np.ndarray:
    """``F(t_max - t) - F(tau - t)``: probability of a report inside ``[tau, t_max]``.

    ``u_low = tau - t`` and ``u_high = t_max - t``.
    """
    u_low = np.asarray(u_low, dtype=float)
    u_high = np.asarray(u_high, dtype=float)
    if np.any(u_high < u_low):
        raise ValueError("window end precedes the valuation date")
    return model.cdf(u_high, X_policy, day) - model.cdf(u_low, X_policy, day)


def window_probability_table(model: LogLogisticDelayModel, dataset: ObservedDataset, D: int, refine: int = 1) -> np.ndarray:
    """Per-period average probability of a report after ``tau`` but within lag ``D``.

    For period ``l`` the window closes at the boundary ``d_{l+D+1}``, the end
    of the last reporting period counted at lag ``D``.
    """
    grid = dataset.grid
    tau = float(grid.valuation_date.astype(np.int64))
    period = np.repeat(np.arange(grid.T), grid.period_days)
    closes = grid.boundary(period + D + 1).astype(np.int64).astype(float)

    def uppers(days):
        return [(1.0, np.maximum(closes, tau)), (-1.0, np.full(days.size, tau))]

    return np.clip(_period_average(model, dataset.X_freq, grid, uppers, refine), 0.0, 1.0)


def delay_params_count(model: LogLogisticDelayModel) -> int:
    return model.coef.size + 1
