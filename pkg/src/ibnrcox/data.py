"""Portfolio data: policies, claims, period grid, exposure and run-off arrays.

Dates are handled as ``numpy.datetime64[D]``.  A period ``t`` (0-based) is
the half-open interval ``[boundaries[t], boundaries[t + 1])`` and the
valuation date is the last boundary, so a claim counts as reported at the
valuation date when its report date falls strictly before it.
"""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

logger = logging.getLogger(__name__)

GRANULARITIES = ("monthly", "weekly", "daily")


class DataValidationError(ValueError):
    """Raised when input files or records violate the data contract."""


def as_day(value) -> np.datetime64:
    return np.datetime64(value, "D")


def as_days(values) -> np.ndarray:
    return np.asarray(values, dtype="datetime64[D]")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyRecord:
    policy_id: str
    coverage_start: np.datetime64
    coverage_end: np.datetime64
    covariates: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not as_day(self.coverage_start) < as_day(self.coverage_end):
            raise DataValidationError(
                f"policy {self.policy_id}: coverage_start must precede coverage_end"
            )


@dataclass(frozen=True)
class ClaimRecord:
    policy_id: str
    occurrence_date: np.datetime64
    report_date: np.datetime64

    def __post_init__(self):
        if as_day(self.report_date) < as_day(self.occurrence_date):
            raise DataValidationError(
                f"claim on policy {self.policy_id}: report_date precedes occurrence_date"
            )


# ---------------------------------------------------------------------------
# Period grid and exposure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodGrid:
    """Ordered period boundaries ``d_0 < ... < d_T`` with ``d_T`` the valuation date."""

    boundaries: np.ndarray
    granularity: str = "monthly"

    def __post_init__(self):
        b = as_days(self.boundaries)
        object.__setattr__(self, "boundaries", b)
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity {self.granularity!r}")
        if b.ndim != 1 or b.size < 2:
            raise ValueError("a grid needs at least two boundaries")
        if np.any(np.diff(b).astype(int) <= 0):
            raise ValueError("grid boundaries must be strictly increasing")

    @classmethod
    def build(cls, granularity: str, valuation_date, start_date) -> "PeriodGrid":
        """Grid of whole periods ending exactly at ``valuation_date``.

        ``start_date`` is rounded down to a period boundary.
        """
        tau = as_day(valuation_date)
        start = as_day(start_date)
        if start >= tau:
            raise ValueError("start_date must precede the valuation date")
        if granularity == "monthly":
            if tau.astype("datetime64[M]").astype("datetime64[D]") != tau:
                raise ValueError("monthly grids need a valuation date on the 1st of a month")
            months = np.arange(
                start.astype("datetime64[M]"), tau.astype("datetime64[M]") + 1
            )
            bounds = months.astype("datetime64[D]")
        elif granularity == "weekly":
            n_weeks = int(np.ceil((tau - start).astype(int) / 7))
            bounds = tau - np.arange(n_weeks, -1, -1) * 7
        elif granularity == "daily":
            bounds = np.arange(start, tau + 1)
        else:
            raise ValueError(f"unknown granularity {granularity!r}")
        return cls(bounds.astype("datetime64[D]"), granularity)

    @property
    def T(self) -> int:
        return self.boundaries.size - 1

    @property
    def valuation_date(self) -> np.datetime64:
        return self.boundaries[-1]

    @property
    def start_date(self) -> np.datetime64:
        return self.boundaries[0]

    @property
    def period_days(self) -> np.ndarray:
        return np.diff(self.boundaries).astype(np.int64)

    def index_of(self, dates) -> np.ndarray:
        """Period index of each date; values outside ``[0, T)`` lie off the grid."""
        d = as_days(dates)
        if self.granularity == "monthly":
            m0 = self.boundaries[0].astype("datetime64[M]").astype(np.int64)
            return d.astype("datetime64[M]").astype(np.int64) - m0
        offset = (d - self.boundaries[0]).astype(np.int64)
        if self.granularity == "weekly":
            return np.floor_divide(offset, 7)
        return offset

    def boundary(self, index) -> np.ndarray:
        """Boundary date ``d_index``; indices beyond ``T`` extend the grid."""
        idx = np.asarray(index, dtype=np.int64)
        if self.granularity == "monthly":
            m0 = self.boundaries[0].astype("datetime64[M]")
            return (m0 + idx).astype("datetime64[D]")
        step = 7 if self.granularity == "weekly" else 1
        return self.boundaries[0] + idx * step

    def truncate(self, valuation_date) -> "PeriodGrid":
        """Sub-grid ending at an earlier boundary."""
        tau = as_day(valuation_date)
        hits = np.flatnonzero(self.boundaries == tau)
        if hits.size == 0 or hits[0] == 0:
            raise ValueError(f"{tau} is not an interior boundary of the grid")
        return PeriodGrid(self.boundaries[: hits[0] + 1], self.granularity)


def compute_exposure(policy: PolicyRecord, grid: PeriodGrid) -> np.ndarray:
    """Fraction of each period during which ``policy`` is in force."""
    return exposure_matrix([policy.coverage_start], [policy.coverage_end], grid)[0]


def exposure_matrix(starts, ends, grid: PeriodGrid) -> np.ndarray:
    """Vectorised exposure for coverage intervals ``[start, end)``; shape (m, T)."""
    s = as_days(starts).astype(np.int64)[:, None]
    e = as_days(ends).astype(np.int64)[:, None]
    lo = grid.boundaries[:-1].astype(np.int64)[None, :]
    hi = grid.boundaries[1:].astype(np.int64)[None, :]
    days = np.clip(np.minimum(e, hi) - np.maximum(s, lo), 0, None)
    return days / (hi - lo)


# ---------------------------------------------------------------------------
# Covariates
# ---------------------------------------------------------------------------


class CovariateEncoder(TransformerMixin, BaseEstimator):
    """Encode policy covariates into a design matrix with an intercept column.

    Categorical columns are one-hot encoded against their first (sorted) level;
    numeric columns are standardised, or turned into categorical bins when an
    entry for them exists in ``bins``.

    Parameters
    ----------
    bins : dict of str -> sequence of float, optional
        Interior bin edges for numeric covariates that should be binned.
    standardize : bool, default True
        Centre and scale numeric covariates.
    """

    def __init__(self, bins=None, standardize=True):
        self.bins = bins
        self.standardize = standardize

    def fit(self, X: pd.DataFrame, y=None):
        X = self._binned(pd.DataFrame(X))
        self.columns_ = list(X.columns)
        self.kinds_ = {}
        self.levels_ = {}
        self.center_ = {}
        self.scale_ = {}
        for col in self.columns_:
            values = X[col]
            if _is_numeric(values):
                self.kinds_[col] = "numeric"
                v = values.astype(float).to_numpy()
                self.center_[col] = float(v.mean()) if self.standardize else 0.0
                sd = float(v.std()) if self.standardize else 1.0
                self.scale_[col] = sd if sd > 0 else 1.0
            else:
                self.kinds_[col] = "categorical"
                self.levels_[col] = sorted(values.astype(str).unique())
        return self

    def transform(self, X: pd.DataFrame) -> np.ndarray:
        check_is_fitted(self, "columns_")
        X = self._binned(pd.DataFrame(X))
        blocks = [np.ones((len(X), 1))]
        for col in self.columns_:
            if self.kinds_[col] == "numeric":
                v = X[col].astype(float).to_numpy()
                blocks.append(((v - self.center_[col]) / self.scale_[col])[:, None])
            else:
                values = X[col].astype(str).to_numpy()
                unknown = set(values) - set(self.levels_[col])
                if unknown:
                    raise DataValidationError(
                        f"covariate {col!r} has unseen levels {sorted(unknown)}"
                    )
                levels = self.levels_[col][1:]
                blocks.append((values[:, None] == np.asarray(levels)[None, :]).astype(float))
        return np.hstack(blocks)

    def get_feature_names_out(self, input_features=None) -> list[str]:
        check_is_fitted(self, "columns_")
        names = ["intercept"]
        for col in self.columns_:
            if self.kinds_[col] == "numeric":
                names.append(col)
            else:
                names.extend(f"{col}={lvl}" for lvl in self.levels_[col][1:])
        return names

    def _binned(self, X: pd.DataFrame) -> pd.DataFrame:
        if not self.bins:
            return X
        X = X.copy()
        for col, edges in self.bins.items():
            if col in X:
                idx = np.digitize(X[col].astype(float).to_numpy(), np.asarray(edges, float))
                X[col] = np.char.add("bin", idx.astype(str))
        return X


def _is_numeric(values: pd.Series) -> bool:
    try:
        values.astype(float)
    except (TypeError, ValueError):
        return False
    return True


TIME_FEATURES = ("none", "month")


def time_feature_matrix(grid: PeriodGrid, kind: str = "none") -> tuple[np.ndarray, list[str]]:
    """Per-period regressors for delay models; month-of-year dummies (January reference)."""
    if kind == "none":
        return np.zeros((grid.T, 0)), []
    if kind == "month":
        months = grid.boundaries[:-1].astype("datetime64[M]").astype(np.int64) % 12
        present = np.unique(months)
        levels = present[1:]
        names = [f"month={m + 1}" for m in levels]
        return (months[:, None] == levels[None, :]).astype(float), names
    raise ValueError(f"unknown time feature kind {kind!r}")


# ---------------------------------------------------------------------------
# Run-off array
# ---------------------------------------------------------------------------


@dataclass
class RunOffArray:
    """Reported claim counts by policy, occurrence period and reporting lag.

    ``z[i, t, d]`` is meaningful only where ``t + d <= T - 1``; other entries
    are zero and masked by :meth:`observed_mask`.  Claims reported with a lag
    beyond ``D`` are tallied in ``spill[t, d]`` (portfolio aggregate, full lag
    axis) instead of ``z``.
    """

    z: np.ndarray
    n_reported: np.ndarray
    D: int
    spill: np.ndarray | None = None

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int64)
        self.n_reported = np.asarray(self.n_reported, dtype=np.int64)
        m, T, width = self.z.shape
        if width != self.D + 1:
            raise ValueError("z must have D + 1 lag columns")
        if self.spill is None:
            self.spill = np.zeros((T, T), dtype=np.int64)
        self.spill = np.asarray(self.spill, dtype=np.int64)
        self.validate()

    @property
    def m(self) -> int:
        return self.z.shape[0]

    @property
    def T(self) -> int:
        return self.z.shape[1]

    def observed_mask(self) -> np.ndarray:
        """Boolean (T, D+1) mask of lags observable at the valuation date."""
        t = np.arange(self.T)[:, None]
        d = np.arange(self.D + 1)[None, :]
        return t + d <= self.T - 1

    def last_observed_lag(self) -> np.ndarray:
        """``min(D, T-1-t)`` for each period."""
        return np.minimum(self.D, self.T - 1 - np.arange(self.T))

    def validate(self) -> None:
        if np.any(self.z < 0) or np.any(self.n_reported < 0):
            raise ValueError("counts must be non-negative")
        if np.any(self.z[:, ~self.observed_mask()] != 0):
            raise ValueError("unobserved run-off cells must be empty")
        if not np.array_equal(self.z.sum(axis=2), self.n_reported):
            raise ValueError("n_reported must equal the sum of z over observed lags")

    def aggregate(self) -> np.ndarray:
        """Portfolio-level incremental counts, shape (T, D+1)."""
        return self.z.sum(axis=0)


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass
class ObservedDataset:
    """Everything known at the valuation date, plus late reports held out as truth.

    Attributes
    ----------
    policies : DataFrame
        ``policy_id``, ``start_date``, ``end_date`` and covariate columns.
    claims : DataFrame
        Claims reported before the valuation date, with ``policy_index``,
        ``occurrence_date``, ``report_date``, ``occ_period`` and ``lag``.
    late_claims : DataFrame
        Claims that occurred before but were reported on or after the
        valuation date.  Never used by the discrete fitters.
    """

    policies: pd.DataFrame
    claims: pd.DataFrame
    late_claims: pd.DataFrame
    grid: PeriodGrid
    exposure: np.ndarray
    runoff: RunOffArray
    encoder: CovariateEncoder
    X_freq: np.ndarray
    time_features: np.ndarray
    time_feature_names: list[str]

    def __post_init__(self):
        m, T = self.exposure.shape
        if (m, T) != self.runoff.n_reported.shape or self.X_freq.shape[0] != m:
            raise ValueError("inconsistent dataset dimensions")
        if self.time_features.shape[0] != T:
            raise ValueError("time features need one row per period")
        if np.any((self.exposure < 0) | (self.exposure > 1)):
            raise ValueError("exposure entries must lie in [0, 1]")

    @property
    def m(self) -> int:
        return self.exposure.shape[0]

    @property
    def T(self) -> int:
        return self.grid.T

    @property
    def D(self) -> int:
        return self.runoff.D

    @property
    def freq_feature_names(self) -> list[str]:
        return self.encoder.get_feature_names_out()

    @property
    def delay_feature_names(self) -> list[str]:
        return self.freq_feature_names + list(self.time_feature_names)

    def delay_design(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique delay-regression rows and the (m, T) map of cells onto them.

        A cell's delay regressors are its policy covariates followed by the
        time features of its occurrence period.
        """
        _, pol_idx = np.unique(self.X_freq, axis=0, return_inverse=True)
        pol_idx = pol_idx.reshape(-1)
        if self.time_features.shape[1]:
            _, time_idx = np.unique(self.time_features, axis=0, return_inverse=True)
            time_idx = time_idx.reshape(-1)
        else:
            time_idx = np.zeros(self.T, dtype=np.int64)
        key = pol_idx[:, None] * (time_idx.max() + 1) + time_idx[None, :]
        uniq, inverse = np.unique(key.ravel(), return_inverse=True)
        first = np.zeros(uniq.size, dtype=np.int64)
        first[inverse[::-1]] = np.arange(key.size)[::-1]
        i, t = np.divmod(first, self.T)
        X = np.hstack([self.X_freq[i], self.time_features[t]])
        return X, inverse.reshape(self.m, self.T)

    def at_valuation(self, valuation_date) -> "ObservedDataset":
        """Re-censor the same portfolio at an earlier valuation date."""
        claims = pd.concat([self.claims, self.late_claims], ignore_index=True)
        return _assemble(
            self.policies,
            claims[["policy_index", "occurrence_date", "report_date"]],
            self.grid.truncate(valuation_date),
            self.D,
            self.encoder,
            _time_kind(self.time_feature_names),
        )

    def summary(self) -> dict:
        hist = None
        if self.T - self.D >= 1:
            hist = delay_histogram(self.runoff, self.T - self.D)
        return {
            "m": self.m,
            "T": self.T,
            "D": self.D,
            "granularity": self.grid.granularity,
            "start_date": str(self.grid.start_date),
            "valuation_date": str(self.grid.valuation_date),
            "reported_claims": int(len(self.claims)),
            "claims_in_runoff": int(self.runoff.n_reported.sum()),
            "claims_beyond_D": int(self.runoff.spill.sum()),
            "total_exposure": float(self.exposure.sum()),
            "delay_histogram": hist,
        }


def _time_kind(names: Sequence[str]) -> str:
    return "month" if any(n.startswith("month=") for n in names) else "none"


def delay_histogram(runoff: RunOffArray, up_to_period: int) -> dict:
    """Lag distribution of claims occurring in the first ``up_to_period`` periods.

    Lags beyond ``D`` are pooled into a final ``"D+"`` bucket from the spill
    tally.  Every lag up to ``D`` must be observable for those periods.
    """
    if up_to_period > runoff.T - runoff.D:
        raise ValueError(
            f"periods beyond T-D={runoff.T - runoff.D} have censored lags"
        )
    if up_to_period < 1:
        raise ValueError("up_to_period must be positive")
    counts = runoff.z[:, :up_to_period, :].sum(axis=(0, 1))
    beyond = int(runoff.spill[:up_to_period].sum())
    all_counts = np.append(counts, beyond)
    total = all_counts.sum()
    pct = 100.0 * all_counts / total if total else np.zeros(all_counts.size)
    labels = [str(d) for d in range(runoff.D + 1)] + [f"{runoff.D + 1}+"]
    return {
        "lags": labels,
        "counts": [int(c) for c in all_counts],
        "percent": [float(p) for p in pct],
        "cumulative_percent": [float(p) for p in np.cumsum(pct)],
    }


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def _read_csv(path) -> pd.DataFrame:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rt") as fh:
            return pd.read_csv(fh, dtype=str)
    return pd.read_csv(path, dtype=str)


def _parse_dates(frame: pd.DataFrame, column: str, what: str) -> np.ndarray:
    try:
        return as_days(pd.to_datetime(frame[column], format="%Y-%m-%d").to_numpy())
    except (ValueError, TypeError) as exc:
        raise DataValidationError(f"{what}: unparseable ISO dates in {column!r}: {exc}") from exc


def load_policies(path) -> pd.DataFrame:
    frame = _read_csv(path)
    missing = {"policy_id", "start_date", "end_date"} - set(frame.columns)
    if missing:
        raise DataValidationError(f"policies file lacks columns {sorted(missing)}")
    frame["start_date"] = _parse_dates(frame, "start_date", "policies")
    frame["end_date"] = _parse_dates(frame, "end_date", "policies")
    bad = np.flatnonzero(frame["start_date"].to_numpy() >= frame["end_date"].to_numpy())
    if bad.size:
        raise DataValidationError(
            f"policies row {bad[0] + 2}: start_date must precede end_date"
        )
    if frame["policy_id"].duplicated().any():
        dup = frame["policy_id"][frame["policy_id"].duplicated()].iloc[0]
        raise DataValidationError(f"duplicate policy_id {dup!r}")
    return frame


def load_claims(path, policy_ids: pd.Series) -> pd.DataFrame:
    frame = _read_csv(path)
    missing = {"policy_id", "occurrence_date", "report_date"} - set(frame.columns)
    if missing:
        raise DataValidationError(f"claims file lacks columns {sorted(missing)}")
    lookup = pd.Series(np.arange(len(policy_ids)), index=policy_ids.to_numpy())
    idx = frame["policy_id"].map(lookup)
    unknown = np.flatnonzero(idx.isna().to_numpy())
    if unknown.size:
        row = unknown[0]
        raise DataValidationError(
            f"claims row {row + 2}: unknown policy_id {frame['policy_id'].iloc[row]!r}"
        )
    occ = _parse_dates(frame, "occurrence_date", "claims")
    rep = _parse_dates(frame, "report_date", "claims")
    bad = np.flatnonzero(rep < occ)
    if bad.size:
        raise DataValidationError(
            f"claims row {bad[0] + 2}: report_date precedes occurrence_date"
        )
    return pd.DataFrame(
        {"policy_index": idx.to_numpy(dtype=np.int64), "occurrence_date": occ, "report_date": rep}
    )


def ingest(
    policies_csv,
    claims_csv,
    granularity: str,
    valuation_date,
    D: int,
    start_date=None,
    bins: Mapping[str, Sequence[float]] | None = None,
    delay_time_features: str = "none",
) -> ObservedDataset:
    """Read policy and claim files and build the dataset observed at ``valuation_date``.

    Claims reported on or after the valuation date are kept aside in
    ``late_claims``; claims reported with a lag above ``D`` periods go to the
    spill tally rather than the run-off array.
    """
    if D < 0:
        raise ValueError("D must be non-negative")
    policies = load_policies(policies_csv)
    claims = load_claims(claims_csv, policies["policy_id"])
    if start_date is None:
        start_date = policies["start_date"].min()
    grid = PeriodGrid.build(granularity, valuation_date, start_date)
    encoder = CovariateEncoder(bins=bins).fit(_covariate_frame(policies))
    return _assemble(policies, claims, grid, D, encoder, delay_time_features)


def _covariate_frame(policies: pd.DataFrame) -> pd.DataFrame:
    cols = [c for c in policies.columns if c not in ("policy_id", "start_date", "end_date")]
    return policies[cols]


def _assemble(policies, claims, grid, D, encoder, time_kind) -> ObservedDataset:
    T = grid.T
    m = len(policies)
    tau = grid.valuation_date
    occ = as_days(claims["occurrence_date"].to_numpy())
    rep = as_days(claims["report_date"].to_numpy())
    occ_period = grid.index_of(occ)
    lag = grid.index_of(rep) - occ_period

    in_window = (occ_period >= 0) & (occ < tau)
    n_before = int(np.sum(occ_period < 0))
    if n_before:
        logger.warning("%d claims occur before the grid start and are ignored", n_before)
    reported = in_window & (rep < tau)
    late = in_window & (rep >= tau)

    obs = claims.loc[reported].copy()
    obs["occ_period"] = occ_period[reported]
    obs["lag"] = lag[reported]
    late_df = claims.loc[late].copy()
    late_df["occ_period"] = occ_period[late]
    late_df["lag"] = lag[late]

    pi = obs["policy_index"].to_numpy(np.int64)
    tp = obs["occ_period"].to_numpy(np.int64)
    lg = obs["lag"].to_numpy(np.int64)
    small = lg <= D
    z = np.zeros((m, T, D + 1), dtype=np.int64)
    np.add.at(z, (pi[small], tp[small], lg[small]), 1)
    spill = np.zeros((T, T), dtype=np.int64)
    np.add.at(spill, (tp[~small], lg[~small]), 1)
    runoff = RunOffArray(z=z, n_reported=z.sum(axis=2), D=D, spill=spill)

    exposure = exposure_matrix(policies["start_date"], policies["end_date"], grid)
    cl_i = claims["policy_index"].to_numpy(np.int64)[in_window]
    cl_t = occ_period[in_window]
    uncovered = np.flatnonzero(exposure[cl_i, cl_t] == 0)
    if uncovered.size:
        k = np.flatnonzero(in_window)[uncovered[0]]
        raise DataValidationError(
            f"claim {k} occurs on {occ[k]} while its policy has no exposure in that period"
        )
    X_freq = encoder.transform(_covariate_frame(policies))
    tf, tf_names = time_feature_matrix(grid, time_kind)
    return ObservedDataset(
        policies=policies.reset_index(drop=True),
        claims=obs.reset_index(drop=True),
        late_claims=late_df.reset_index(drop=True),
        grid=grid,
        exposure=exposure,
        runoff=runoff,
        encoder=encoder,
        X_freq=X_freq,
        time_features=tf,
        time_feature_names=tf_names,
    )


def from_frames(
    policies: pd.DataFrame,
    claims: pd.DataFrame,
    granularity: str,
    valuation_date,
    D: int,
    start_date=None,
    bins=None,
    delay_time_features: str = "none",
) -> ObservedDataset:
    """In-memory counterpart of :func:`ingest`.

    ``policies`` needs ``policy_id``, ``start_date``, ``end_date`` plus
    covariates; ``claims`` needs ``policy_id``, ``occurrence_date``,
    ``report_date``.
    """
    policies = policies.copy()
    policies["start_date"] = as_days(policies["start_date"].to_numpy())
    policies["end_date"] = as_days(policies["end_date"].to_numpy())
    if np.any(policies["start_date"].to_numpy() >= policies["end_date"].to_numpy()):
        raise DataValidationError("policy start_date must precede end_date")
    lookup = pd.Series(np.arange(len(policies)), index=policies["policy_id"].astype(str).to_numpy())
    idx = claims["policy_id"].astype(str).map(lookup)
    if idx.isna().any():
        row = int(np.flatnonzero(idx.isna().to_numpy())[0])
        raise DataValidationError(f"claims row {row}: unknown policy_id")
    frame = pd.DataFrame(
        {
            "policy_index": idx.to_numpy(dtype=np.int64),
            "occurrence_date": as_days(claims["occurrence_date"].to_numpy()),
            "report_date": as_days(claims["report_date"].to_numpy()),
        }
    )
    if np.any(frame["report_date"].to_numpy() < frame["occurrence_date"].to_numpy()):
        raise DataValidationError("report_date precedes occurrence_date")
    if start_date is None:
        start_date = policies["start_date"].min()
    grid = PeriodGrid.build(granularity, valuation_date, start_date)
    encoder = CovariateEncoder(bins=bins).fit(_covariate_frame(policies))
    return _assemble(policies, frame, grid, D, encoder, delay_time_features)
