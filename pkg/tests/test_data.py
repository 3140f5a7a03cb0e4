import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ibnrcox.data import (
    CovariateEncoder,
    DataValidationError,
    PeriodGrid,
    PolicyRecord,
    RunOffArray,
    compute_exposure,
    delay_histogram,
    exposure_matrix,
    from_frames,
    ingest,
)
from ibnrcox.fixtures import TABLE1_OCCURRENCE_PERIODS, load_table1

TABLE1_COUNTS = [66475, 11617, 1580, 642, 342, 192, 141, 105, 80, 52, 130]
TABLE1_PERCENT = [81.71, 14.28, 1.94, 0.79, 0.42, 0.24, 0.17, 0.13, 0.10, 0.06, 0.16]
TABLE1_CUMULATIVE = [81.71, 95.99, 97.93, 98.72, 99.14, 99.38, 99.55, 99.68, 99.78, 99.84, 100.00]


def policies(*rows):
    return pd.DataFrame(rows, columns=["policy_id", "start_date", "end_date"])


def claims(*rows):
    return pd.DataFrame(list(rows), columns=["policy_id", "occurrence_date", "report_date"])


class TestGrid:
    def test_monthly(self):
        g = PeriodGrid.build("monthly", "2020-04-01", "2020-01-15")
        assert g.T == 3
        np.testing.assert_array_equal(g.period_days, [31, 29, 31])
        np.testing.assert_array_equal(g.index_of(np.array(["2020-01-01", "2020-02-29", "2020-03-01"], dtype="datetime64[D]")), [0, 1, 2])

    def test_boundary_belongs_to_next_period(self):
        g = PeriodGrid.build("weekly", "2020-01-29", "2020-01-01")
        np.testing.assert_array_equal(g.index_of(np.array(["2020-01-07", "2020-01-08"], dtype="datetime64[D]")), [0, 1])

    def test_invalid(self):
        with pytest.raises(ValueError):
            PeriodGrid.build("monthly", "2020-04-15", "2020-01-01")
        with pytest.raises(ValueError):
            PeriodGrid(np.array(["2020-01-02", "2020-01-01"], dtype="datetime64[D]"))
        with pytest.raises(ValueError):
            PeriodGrid.build("yearly", "2020-04-01", "2020-01-01")


class TestExposure:
    grid = PeriodGrid.build("monthly", "2020-07-01", "2020-04-01")

    def test_hand_values(self):
        rec = PolicyRecord("a", np.datetime64("2020-04-01"), np.datetime64("2020-06-16"))
        # April full, May full, 15 of 30 June days
        np.testing.assert_allclose(compute_exposure(rec, self.grid), [1.0, 1.0, 0.5])

    def test_inactive(self):
        rec = PolicyRecord("a", np.datetime64("2021-01-01"), np.datetime64("2022-01-01"))
        np.testing.assert_array_equal(compute_exposure(rec, self.grid), 0.0)

    @given(st.integers(0, 200), st.integers(1, 200))
    def test_days_accounting(self, offset, length):
        start = np.datetime64("2020-03-01") + offset
        end = start + length
        e = exposure_matrix([start], [end], self.grid)[0]
        assert np.all((e >= 0) & (e <= 1))
        lo, hi = np.datetime64("2020-04-01"), np.datetime64("2020-07-01")
        inside = max(0, int((min(end, hi) - max(start, lo)).astype(int)))
        np.testing.assert_allclose(np.sum(e * self.grid.period_days), inside)


class TestIngest:
    def test_single_claim(self):
        ds = from_frames(policies(("a", "2020-01-01", "2021-01-01")), claims(("a", "2020-02-03", "2020-02-20")), "monthly", "2020-06-01", 3)
        assert ds.runoff.z[0, 1, 0] == 1 and ds.runoff.z.sum() == 1
        assert ds.runoff.n_reported[0, 1] == 1

    def test_lag_three(self):
        ds = from_frames(policies(("a", "2020-01-01", "2021-01-01")), claims(("a", "2020-01-31", "2020-04-01")), "monthly", "2020-06-01", 3)
        assert ds.runoff.z[0, 0, 3] == 1 and ds.runoff.z.sum() == 1

    def test_spill_and_late(self):
        cl = claims(("a", "2020-01-10", "2020-05-10"), ("a", "2020-05-10", "2020-06-02"))
        ds = from_frames(policies(("a", "2020-01-01", "2021-01-01")), cl, "monthly", "2020-06-01", 2)
        assert ds.runoff.z.sum() == 0
        assert ds.runoff.spill[0, 4] == 1
        assert len(ds.late_claims) == 1

    def test_csv_errors_report_rows(self, tmp_path):
        pol = tmp_path / "p.csv"
        pol.write_text("policy_id,start_date,end_date\na,2020-01-01,2021-01-01\n")
        cl = tmp_path / "c.csv"
        cl.write_text("policy_id,occurrence_date,report_date\na,2020-01-05,2020-01-09\nzz,2020-01-05,2020-01-09\n")
        with pytest.raises(DataValidationError, match="row 3"):
            ingest(pol, cl, "monthly", "2020-06-01", 2)
        cl.write_text("policy_id,occurrence_date,report_date\na,2020-01-05,2020-01-01\n")
        with pytest.raises(DataValidationError, match="row 2"):
            ingest(pol, cl, "monthly", "2020-06-01", 2)
        pol.write_text("policy_id,start_date,end_date\na,2021-01-01,2020-01-01\n")
        with pytest.raises(DataValidationError, match="row 2"):
            ingest(pol, cl, "monthly", "2020-06-01", 2)

    def test_claim_outside_coverage(self):
        with pytest.raises(DataValidationError, match="no exposure"):
            from_frames(policies(("a", "2020-03-01", "2021-01-01")), claims(("a", "2020-01-05", "2020-01-09")), "monthly", "2020-06-01", 2, start_date="2020-01-01")

    def test_at_valuation_matches_direct(self, small_mm_dataset):
        ds, truth = small_mm_dataset
        early = ds.at_valuation(str(ds.grid.boundaries[-6]))
        assert early.T == ds.T - 5
        assert early.runoff.z.sum() <= ds.runoff.z.sum()
        full = early.runoff.observed_mask()
        np.testing.assert_array_equal(early.runoff.z[:, : early.T - ds.D], ds.runoff.z[:, : early.T - ds.D])
        assert np.all(early.runoff.z[:, ~full] == 0)

    def test_runoff_invariants(self):
        with pytest.raises(ValueError):
            RunOffArray(np.ones((1, 2, 2)), np.array([[2, 2]]), 1)


class TestHistogram:
    def test_table1_fixture(self):
        ds = load_table1()
        h = delay_histogram(ds.runoff, TABLE1_OCCURRENCE_PERIODS)
        assert h["counts"] == TABLE1_COUNTS
        np.testing.assert_array_equal(np.round(h["percent"], 2), TABLE1_PERCENT)
        np.testing.assert_array_equal(np.round(h["cumulative_percent"], 2), TABLE1_CUMULATIVE)

    def test_hand_cases(self):
        z = np.zeros((1, 10, 6), dtype=int)
        z[0, 0, 0] = 1
        z[0, 1, 5] = 1
        r = RunOffArray(z, z.sum(axis=2), 5)
        h = delay_histogram(r, 4)
        assert h["percent"][0] == 50.0 and h["percent"][5] == 50.0
        z[0, 1, 5] = 0
        r = RunOffArray(z, z.sum(axis=2), 5)
        assert delay_histogram(r, 4)["percent"][:2] == [100.0, 0.0]

    def test_censored_request(self):
        r = RunOffArray(np.zeros((1, 10, 6), dtype=int), np.zeros((1, 10), dtype=int), 5)
        with pytest.raises(ValueError):
            delay_histogram(r, 6)


class TestEncoder:
    frame = pd.DataFrame({"region": ["B", "A", "C", "A"], "age": [1.0, 2.0, 3.0, 4.0]})

    def test_design(self):
        enc = CovariateEncoder().fit(self.frame)
        X = enc.transform(self.frame)
        assert enc.get_feature_names_out() == ["intercept", "region=B", "region=C", "age"]
        np.testing.assert_array_equal(X[:, 1:3], [[1, 0], [0, 0], [0, 1], [0, 0]])
        np.testing.assert_allclose(X[:, 3].mean(), 0.0, atol=1e-15)

    def test_bins(self):
        enc = CovariateEncoder(bins={"age": [2.5]}).fit(self.frame)
        assert enc.get_feature_names_out() == ["intercept", "region=B", "region=C", "age=bin1"]

    def test_unseen_level(self):
        enc = CovariateEncoder().fit(self.frame)
        with pytest.raises(DataValidationError):
            enc.transform(pd.DataFrame({"region": ["Z"], "age": [1.0]}))
