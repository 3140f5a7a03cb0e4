"""IBNR claim-count prediction, the beyond-D tail, chain ladder and error metrics."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ObservedDataset, RunOffArray
from .delay_continuous import window_probability_table
from .delay_discrete import sample_tilted_beta
from .em.common import EMData, FitResult, state_rates
from .em.continuous import reported_log_emissions
from .em.dirichlet import dirichlet_log_emissions
from .em.multinomial import multinomial_log_emissions
from .hmm import forward, viterbi

logger = logging.getLogger(__name__)


@dataclass
class IbnrEstimate:
    """Simulated distribution of the total IBNR count at one valuation date."""

    draws: np.ndarray
    per_period: np.ndarray
    valuation_date: str = ""
    tail: float = 0.0
    state_path: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def point(self) -> float:
        return float(self.draws.mean()) + self.tail

    @property
    def interval(self) -> tuple[float, float]:
        lo, hi = np.quantile(self.draws, [0.025, 0.975])
        return float(lo) + self.tail, float(hi) + self.tail

    @property
    def lower(self) -> float:
        return self.interval[0]

    @property
    def upper(self) -> float:
        return self.interval[1]

    def summary(self) -> dict:
        return {"point": self.point, "lower": self.lower, "upper": self.upper}


def _sample_path_ffbs(log_emis, pi, gamma, rng, size):
    """Draw state paths from their posterior by forward filtering, backward sampling."""
    la, _ = forward(log_emis, pi, gamma)
    T, g = la.shape
    with np.errstate(divide="ignore"):
        lg = np.log(gamma)
    paths = np.empty((size, T), dtype=np.int64)
    w = np.exp(la[-1] - la[-1].max())
    paths[:, -1] = rng.choice(g, size=size, p=w / w.sum())
    for t in range(T - 2, -1, -1):
        logits = la[t][None, :] + lg[:, paths[:, t + 1]].T
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        u = rng.random(size)[:, None]
        paths[:, t] = np.minimum((np.cumsum(probs, axis=1) < u).sum(axis=1), g - 1)
    return paths


def _log_emissions(fit: FitResult, data: EMData, dataset: ObservedDataset):
    if fit.kind == "mm":
        return multinomial_log_emissions(data, fit.params)[0]
    if fit.kind == "dm":
        return dirichlet_log_emissions(data, fit.params)[0]
    if fit.kind == "cm":
        from .delay_continuous import report_probability_integrals

        R = report_probability_integrals(fit.params.delay, dataset)
        return reported_log_emissions(data, fit.params.theta, R)
    raise ValueError(f"unknown model kind {fit.kind!r}")


def simulate_ibnr(
    fit: FitResult,
    dataset: ObservedDataset,
    n_sims: int = 1000,
    seed: int | None = 0,
    states: str = "viterbi",
    dm_delay: str = "prior",
    chunk: int = 100,
) -> IbnrEstimate:
    """Simulate the total IBNR count (lags up to ``D``) at the dataset's valuation date.

    The state path is the Viterbi path (``states="viterbi"``) or a fresh
    posterior draw per simulation (``states="posterior"``).  Only periods
    with unobserved lags contribute.  For each censored cell the unreported
    count is Poisson with mean ``e lambda_c(x) * s`` where ``s`` is the
    unreported share: ``1 - p^r`` for the multinomial model, a fresh draw of
    ``1 - p^r`` from the Dirichlet prior (or posterior, ``dm_delay``) for
    the Dirichlet model, and the probability of a report between the
    valuation date and lag ``D`` for the continuous model.
    """
    if fit.params is None:
        raise ValueError("model has not been fitted")
    rng = np.random.default_rng(seed)
    data = EMData.from_dataset(dataset)
    D = data.D
    T = data.T
    params = fit.params
    log_emis = _log_emissions(fit, data, dataset)
    path = viterbi(log_emis, params.pi, params.gamma)
    cens_t = np.flatnonzero(data.last_lag < D)
    lam = state_rates(data.X_freq, params.theta)
    e = data.exposure

    if fit.kind == "mm":
        P = params.delay_probs(data.X_delay)[data.delay_group]
        share = np.sum(P * ~data.lag_mask()[None], axis=2)
    elif fit.kind == "cm":
        share = window_probability_table(params.delay, dataset, D)
    else:
        eta = params.eta(data.X_delay)[data.delay_group]
        mask = data.lag_mask()
        A = np.sum(eta * mask[None], axis=2)
        B = np.sum(eta * ~mask[None], axis=2)
        share = None

    per_period = np.zeros(T)
    draws = np.zeros(n_sims, dtype=np.int64)
    if cens_t.size == 0 or n_sims == 0:
        return IbnrEstimate(draws, per_period, str(dataset.grid.valuation_date), 0.0, path)

    ci, ct = np.nonzero((e[:, cens_t] > 0))
    ct = cens_t[ct]
    if states == "viterbi":
        path_draws = None
    elif states == "posterior":
        path_draws = _sample_path_ffbs(log_emis, params.pi, params.gamma, rng, n_sims)
    else:
        raise ValueError("states must be 'viterbi' or 'posterior'")

    totals_by_period = np.zeros(T)
    done = 0
    while done < n_sims:
        size = min(chunk, n_sims - done)
        if path_draws is None:
            st = np.broadcast_to(path[ct], (size, ct.size))
        else:
            st = path_draws[done : done + size][:, ct]
        rate = e[ci, ct][None, :] * lam[ci[None, :], st]
        if fit.kind == "dm":
            if dm_delay == "prior":
                x = rng.beta(np.broadcast_to(A[ci, ct], (size, ct.size)), np.broadcast_to(B[ci, ct], (size, ct.size)))
            elif dm_delay == "posterior":
                x = np.empty((size, ct.size))
                n_ct = data.n[ci, ct]
                for j in np.unique(st):
                    sel = st == j
                    cols = np.flatnonzero(sel.any(axis=0))
                    xs = sample_tilted_beta(A[ci[cols], ct[cols]] + n_ct[cols], B[ci[cols], ct[cols]], e[ci[cols], ct[cols]] * lam[ci[cols], j], size, rng)
                    x[:, cols] = np.where(sel[:, cols], xs.T, x[:, cols])
            else:
                raise ValueError("dm_delay must be 'prior' or 'posterior'")
            mean = rate * (1.0 - x)
        else:
            mean = rate * share[ci, ct][None, :]
        counts = rng.poisson(np.clip(mean, 0.0, None))
        draws[done : done + size] = counts.sum(axis=1)
        totals_by_period += np.bincount(ct, weights=counts.sum(axis=0), minlength=T)
        done += size
    per_period = totals_by_period / n_sims
    return IbnrEstimate(draws, per_period, str(dataset.grid.valuation_date), 0.0, path)


def expected_ibnr(fit: FitResult, dataset: ObservedDataset) -> float:
    """Mean of the simulated total given the Viterbi path, without simulation."""
    data = EMData.from_dataset(dataset)
    params = fit.params
    path = viterbi(_log_emissions(fit, data, dataset), params.pi, params.gamma)
    lam = state_rates(data.X_freq, params.theta)[:, path]
    if fit.kind == "mm":
        P = params.delay_probs(data.X_delay)[data.delay_group]
        share = np.sum(P * ~data.lag_mask()[None], axis=2)
    elif fit.kind == "dm":
        eta = params.eta(data.X_delay)[data.delay_group]
        mask = data.lag_mask()
        share = np.sum(eta * ~mask[None], axis=2) / eta.sum(axis=2)
    else:
        share = window_probability_table(params.delay, dataset, data.D)
    return float(np.sum(data.exposure * lam * share))


# ---------------------------------------------------------------------------
# Tail beyond D
# ---------------------------------------------------------------------------


def tail_beyond_D(runoff: RunOffArray) -> float:
    """Expected number of not-yet-reported claims with lag above ``D``.

    For occurrence period ``t`` and an unobserved lag ``d > D`` the count is
    estimated by the historical sum ``(1 / (T - 1)) * sum_{l < t} z_{l,d}``
    of the aggregate spill tally; lags up to ``T - 1`` are covered.
    """
    T, D = runoff.T, runoff.D
    spill = np.asarray(runoff.spill, dtype=float)
    if T < 2 or spill.sum() == 0:
        if T >= 2:
            warnings.warn("no claims beyond lag D in the history; tail set to 0", UserWarning)
        return 0.0
    # history[t, d] = sum_{l < t} spill[l, d]
    history = np.vstack([np.zeros((1, T)), np.cumsum(spill, axis=0)[:-1]])
    t = np.arange(T)[:, None]
    d = np.arange(T)[None, :]
    eligible = (d > np.maximum(D, T - 1 - t)) & (d <= T - 1)
    return float(np.sum(history * eligible) / (T - 1))


# ---------------------------------------------------------------------------
# Chain ladder
# ---------------------------------------------------------------------------


def runoff_triangle(runoff: RunOffArray) -> np.ndarray:
    """Cumulative aggregate counts (T, D+1) with NaN where not yet observed."""
    inc = runoff.aggregate().astype(float)
    cum = np.cumsum(inc, axis=1)
    return np.where(runoff.observed_mask(), cum, np.nan)


@dataclass
class ChainLadderResult:
    factors: np.ndarray
    ultimate: np.ndarray
    latest: np.ndarray
    completed: np.ndarray

    @property
    def ibnr(self) -> float:
        return float(np.sum(self.ultimate - self.latest))

    @property
    def ibnr_by_row(self) -> np.ndarray:
        return self.ultimate - self.latest


def chain_ladder(triangle) -> ChainLadderResult:
    """Volume-weighted chain ladder on a cumulative triangle (NaN = unobserved).

    Each development factor pools the rows observed at both lags.  A factor
    whose denominator is zero is set to one with a warning.
    """
    C = np.asarray(triangle, dtype=float)
    n_rows, n_dev = C.shape
    factors = np.ones(max(n_dev - 1, 0))
    for d in range(n_dev - 1):
        both = ~np.isnan(C[:, d]) & ~np.isnan(C[:, d + 1])
        den = C[both, d].sum()
        if not both.any() or den == 0:
            warnings.warn(f"development factor {d}->{d + 1} has no volume; using 1", UserWarning)
            continue
        factors[d] = C[both, d + 1].sum() / den
    completed = C.copy()
    latest = np.zeros(n_rows)
    for r in range(n_rows):
        obs = np.flatnonzero(~np.isnan(C[r]))
        if obs.size == 0:
            continue
        last = obs[-1]
        latest[r] = C[r, last]
        for d in range(last, n_dev - 1):
            completed[r, d + 1] = completed[r, d] * factors[d]
    ultimate = np.where(np.isnan(completed[:, -1]), 0.0, completed[:, -1])
    return ChainLadderResult(factors, ultimate, latest, completed)


def chain_ladder_ibnr(runoff: RunOffArray) -> float:
    return chain_ladder(runoff_triangle(runoff)).ibnr


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def absolute_percentage_error(estimate: float, actual: float) -> float:
    return abs(estimate - actual) / actual


def evaluate(estimates: dict, actuals: dict) -> dict:
    """Absolute percentage errors and interval coverage across valuation dates.

    ``estimates`` maps a date to a dict with ``point`` and optionally
    ``lower``/``upper``; ``actuals`` maps the same dates to true counts.
    Dates whose actual count is zero are left out of the percentage
    metrics and listed separately.
    """
    if set(estimates) != set(actuals):
        raise ValueError("estimates and actuals cover different valuation dates")
    dates = sorted(estimates)
    per_date = {}
    apes = []
    covered = 0
    with_interval = 0
    zero_dates = []
    for d in dates:
        est = estimates[d]
        act = float(actuals[d])
        row = {"point": float(est["point"]), "actual": act}
        if "lower" in est and "upper" in est and est["lower"] is not None:
            inside = est["lower"] <= act <= est["upper"]
            row["covered"] = bool(inside)
            covered += int(inside)
            with_interval += 1
        if act == 0:
            zero_dates.append(d)
        else:
            row["ape"] = absolute_percentage_error(row["point"], act)
            apes.append(row["ape"])
        per_date[d] = row
    apes = np.asarray(apes)
    out = {
        "per_date": per_date,
        "n_dates": len(dates),
        "zero_actual_dates": zero_dates,
        "mean_ape": float(apes.mean()) if apes.size else float("nan"),
        "median_ape": float(np.median(apes)) if apes.size else float("nan"),
        "sd_ape": float(apes.std(ddof=1)) if apes.size > 1 else float("nan"),
    }
    if with_interval:
        out["coverage_count"] = covered
        out["coverage"] = covered / with_interval
    return out
