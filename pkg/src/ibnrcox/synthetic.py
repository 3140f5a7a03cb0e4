"""Synthetic portfolios drawn from the hidden-Markov claim-count model.

A hidden chain drives per-period Poisson claim counts for every policy;
each claim receives a reporting lag, either from a fixed lag distribution,
from a lag distribution drawn per policy-period from a Dirichlet law, or as
a continuous log-logistic delay in days.  The output mimics the input files
(policies and every claim with its eventual report date) plus the ground
truth needed to score IBNR predictions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import PeriodGrid, as_day, as_days, exposure_matrix, from_frames
from .delay_discrete import q_to_p, p_to_q
from .glm import link_function, link_inverse

DELAY_KINDS = ("fixed", "dirichlet", "loglogistic")
EXPOSURE_KINDS = ("full", "staggered")

DEFAULT_LAG_PROBS = (0.62, 0.22, 0.07, 0.035, 0.02, 0.012, 0.01, 0.007, 0.005, 0.001)


@dataclass
class ScenarioConfig:
    """Truth and layout of a synthetic portfolio.

    Frequencies are ``lambda_j(x) = base_rates[j] * exp(x . effects)`` per
    policy and period, where ``x`` holds the dummies of a three-level
    categorical covariate ``region`` (levels A, B, C) and a standardised
    numeric covariate ``age``.
    """

    m: int = 200
    T: int = 36
    D: int = 9
    g: int = 2
    granularity: str = "monthly"
    start_date: str = "2015-01-01"
    pi: tuple = (0.5, 0.5)
    gamma: tuple = ((0.9, 0.1), (0.2, 0.8))
    base_rates: tuple = (0.05, 0.15)
    region_effects: tuple = (0.0, 0.3, -0.2)
    age_effect: float = 0.2
    covariates: bool = True
    delay: str = "fixed"
    lag_probs: tuple = DEFAULT_LAG_PROBS
    delay_region_effect: float = 0.0
    concentration: float = 20.0
    delay_scale_days: float = 12.0
    delay_shape: float = 1.5
    exposure: str = "full"
    n_valuations: int = 1
    seed: int = 0

    def __post_init__(self):
        self.pi = tuple(float(v) for v in np.ravel(self.pi))
        self.gamma = tuple(tuple(float(v) for v in row) for row in np.asarray(self.gamma, dtype=float))
        self.base_rates = tuple(float(v) for v in np.ravel(self.base_rates))
        self.lag_probs = tuple(float(v) for v in np.ravel(self.lag_probs))
        self.region_effects = tuple(float(v) for v in np.ravel(self.region_effects))
        g = self.g
        if len(self.pi) != g or len(self.base_rates) != g or np.shape(self.gamma) != (g, g):
            raise ValueError("pi, gamma and base_rates must match g")
        if abs(sum(self.pi) - 1) > 1e-10 or np.any(np.abs(np.sum(self.gamma, axis=1) - 1) > 1e-10):
            raise ValueError("pi and the rows of gamma must sum to one")
        if self.delay not in DELAY_KINDS:
            raise ValueError(f"delay must be one of {DELAY_KINDS}")
        if self.exposure not in EXPOSURE_KINDS:
            raise ValueError(f"exposure must be one of {EXPOSURE_KINDS}")
        if self.delay != "loglogistic" and len(self.lag_probs) != self.D + 1:
            raise ValueError("lag_probs needs D + 1 entries")
        if min(self.base_rates) <= 0:
            raise ValueError("base rates must be positive")
        if not 1 <= self.n_valuations <= self.T:
            raise ValueError("n_valuations must lie in 1..T")

    @classmethod
    def from_dict(cls, values: dict) -> "ScenarioConfig":
        known = {k: v for k, v in values.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self) -> dict:
        return asdict(self)

    def grid(self) -> PeriodGrid:
        start = as_day(self.start_date)
        if self.granularity == "monthly":
            end = (start.astype("datetime64[M]") + self.T).astype("datetime64[D]")
        elif self.granularity == "weekly":
            end = start + 7 * self.T
        else:
            end = start + self.T
        return PeriodGrid.build(self.granularity, end, start)

    def lag_probs_for(self, region: np.ndarray) -> np.ndarray:
        """Lag distribution of each policy; the region effect shifts every ``q_d``."""
        base = np.asarray(self.lag_probs, dtype=float)
        base = base / base.sum()
        if self.delay_region_effect == 0.0 or self.D == 0:
            return np.tile(base, (region.size, 1))
        q = np.clip(p_to_q(base), 1e-9, 1 - 1e-9)
        eta = link_function(q, "cloglog")[None, :] + self.delay_region_effect * (region == 1)[:, None]
        return q_to_p(link_inverse(eta, "cloglog"))

    def valuation_dates(self) -> list[str]:
        b = self.grid().boundaries
        return [str(d) for d in b[len(b) - self.n_valuations :]]


@dataclass
class GroundTruth:
    """Complete event history and hidden quantities behind a synthetic portfolio."""

    events: pd.DataFrame
    states: np.ndarray
    lags_full: np.ndarray
    rates: np.ndarray
    config: ScenarioConfig
    grid: PeriodGrid
    ibnr: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.config.seed,
            "D": self.config.D,
            "granularity": self.config.granularity,
            "states": [int(s) for s in self.states],
            "valuation_dates": self.config.valuation_dates(),
            "ibnr": {k: int(v) for k, v in sorted(self.ibnr.items())},
            "total_claims": int(len(self.events)),
        }


def truth_ibnr(events: pd.DataFrame, grid: PeriodGrid, valuation_date, D: int) -> int:
    """Claims that occurred before ``valuation_date`` and are reported at or after it
    with a lag of at most ``D`` periods."""
    tau = as_day(valuation_date)
    occ = as_days(events["occurrence_date"].to_numpy())
    rep = as_days(events["report_date"].to_numpy())
    lag = grid.index_of(rep) - grid.index_of(occ)
    return int(np.sum((occ < tau) & (rep >= tau) & (lag <= D)))


def _policies(config: ScenarioConfig, grid: PeriodGrid, rng: np.random.Generator) -> pd.DataFrame:
    m = config.m
    ids = [f"P{i:05d}" for i in range(m)]
    start = grid.start_date
    end = grid.valuation_date
    horizon = int((end - start).astype(int))
    if config.exposure == "full":
        starts = np.full(m, start)
        # cover the whole horizon and the reporting run-off after it
        ends = np.full(m, end + 3650)
    else:
        offsets = rng.integers(0, max(horizon // 3, 1), size=m)
        starts = start + offsets
        durations = rng.integers(365, 3 * 365 + 1, size=m)
        ends = starts + durations
    frame = pd.DataFrame({"policy_id": ids, "start_date": as_days(starts), "end_date": as_days(ends)})
    if config.covariates:
        frame["region"] = np.array(["A", "B", "C"])[rng.integers(0, 3, size=m)]
        age = rng.normal(size=m)
        frame["age"] = np.round(age, 6)
    return frame


def _rates(config: ScenarioConfig, policies: pd.DataFrame) -> np.ndarray:
    """(m, g) per-period claim rates."""
    effect = np.zeros(len(policies))
    if config.covariates:
        levels = {"A": 0, "B": 1, "C": 2}
        reg = policies["region"].map(levels).to_numpy()
        effect = np.asarray(config.region_effects)[reg] + config.age_effect * policies["age"].to_numpy(float)
    return np.asarray(config.base_rates)[None, :] * np.exp(effect)[:, None]


def _sample_chain(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    gamma = np.asarray(config.gamma)
    states = np.empty(config.T, dtype=np.int64)
    states[0] = rng.choice(config.g, p=np.asarray(config.pi))
    for t in range(1, config.T):
        states[t] = rng.choice(config.g, p=gamma[states[t - 1]])
    return states


def generate(config: ScenarioConfig):
    """Simulate a portfolio.

    Returns
    -------
    policies : DataFrame
    claims : DataFrame
        Every claim that occurs in the horizon, with its eventual report
        date, which may fall after the last valuation date.
    truth : GroundTruth
    """
    rng = np.random.default_rng(config.seed)
    grid = config.grid()
    policies = _policies(config, grid, rng)
    states = _sample_chain(config, rng)
    rates = _rates(config, policies)
    e = exposure_matrix(policies["start_date"], policies["end_date"], grid)
    mean = e * rates[:, states]
    counts = rng.poisson(mean)
    m, T, D = config.m, config.T, config.D

    cell_i, cell_t = np.nonzero(counts)
    n_cell = counts[cell_i, cell_t]
    region = np.zeros(m, dtype=np.int64)
    if config.covariates:
        region = policies["region"].map({"A": 0, "B": 1, "C": 2}).to_numpy()

    # occurrence days: uniform over the covered days of the period
    lo = np.maximum(as_days(policies["start_date"]).astype(np.int64)[cell_i], grid.boundaries[cell_t].astype(np.int64))
    hi = np.minimum(as_days(policies["end_date"]).astype(np.int64)[cell_i], grid.boundaries[cell_t + 1].astype(np.int64))
    ev_i = np.repeat(cell_i, n_cell)
    ev_t = np.repeat(cell_t, n_cell)
    occ = rng.integers(np.repeat(lo, n_cell), np.repeat(hi, n_cell))

    lags_full = np.zeros((m, T, D + 1), dtype=np.int64)
    if config.delay in ("fixed", "dirichlet"):
        probs = config.lag_probs_for(region)[cell_i]
        if config.delay == "dirichlet":
            alpha = np.clip(config.concentration * probs, 1e-3, None)
            probs = rng.gamma(alpha)
            probs /= probs.sum(axis=1, keepdims=True)
        lag_counts = rng.multinomial(n_cell, probs) if n_cell.size else np.zeros((0, D + 1), dtype=np.int64)
        lags_full[cell_i, cell_t] = lag_counts
        ev_lag = np.concatenate([np.repeat(np.arange(D + 1), row) for row in lag_counts]) if n_cell.size else np.zeros(0, dtype=np.int64)
        rep_period = ev_t + ev_lag
        r_lo = np.where(ev_lag == 0, occ, grid.boundary(rep_period).astype(np.int64))
        r_hi = grid.boundary(rep_period + 1).astype(np.int64)
        rep = rng.integers(r_lo, r_hi)
    else:
        u = config.delay_scale_days * (1.0 / rng.random(occ.size) - 1.0) ** (-1.0 / config.delay_shape)
        rep = np.floor(occ + 0.5 + u).astype(np.int64)
        ev_lag = grid.index_of(rep.astype("datetime64[D]")) - ev_t
        small = ev_lag <= D
        np.add.at(lags_full, (ev_i[small], ev_t[small], ev_lag[small]), 1)

    events = pd.DataFrame(
        {
            "policy_id": policies["policy_id"].to_numpy()[ev_i],
            "occurrence_date": occ.astype("datetime64[D]"),
            "report_date": rep.astype("datetime64[D]"),
        }
    )
    events = events.sort_values(["occurrence_date", "report_date", "policy_id"], kind="stable").reset_index(drop=True)
    truth = GroundTruth(events, states, lags_full, rates, config, grid)
    for date in config.valuation_dates():
        truth.ibnr[date] = truth_ibnr(events, grid, date, D)
    return policies, events, truth


def simulate_dataset(config: ScenarioConfig, valuation_date=None, delay_time_features="none"):
    """Generate a portfolio and return the dataset observed at ``valuation_date``
    (default: the end of the horizon) with its ground truth."""
    policies, claims, truth = generate(config)
    tau = valuation_date or config.grid().valuation_date
    ds = from_frames(
        policies,
        claims,
        config.granularity,
        tau,
        config.D,
        start_date=config.start_date,
        delay_time_features=delay_time_features,
    )
    return ds, truth


def write_scenario(out_dir, policies: pd.DataFrame, claims: pd.DataFrame, truth: GroundTruth) -> dict:
    """Write ``policies.csv``, ``claims.csv`` and ``truth.json``; returns a summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pol = policies.copy()
    pol["start_date"] = as_days(pol["start_date"].to_numpy()).astype(str)
    pol["end_date"] = as_days(pol["end_date"].to_numpy()).astype(str)
    pol.to_csv(out / "policies.csv", index=False, lineterminator="\n")
    cl = claims.copy()
    cl["occurrence_date"] = as_days(cl["occurrence_date"].to_numpy()).astype(str)
    cl["report_date"] = as_days(cl["report_date"].to_numpy()).astype(str)
    cl.to_csv(out / "claims.csv", index=False, lineterminator="\n")
    payload = truth.to_json_dict()
    payload["config"] = truth.config.to_dict()
    (out / "truth.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return {
        "policies": int(len(pol)),
        "claims": int(len(cl)),
        "valuation_dates": truth.config.valuation_dates(),
        "ibnr": payload["ibnr"],
    }
