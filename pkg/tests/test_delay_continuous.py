import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from ibnrcox.data import from_frames
from ibnrcox.delay_continuous import (
    DayFeatures,
    LogLogisticDelayModel,
    fit_dataset_delay,
    fit_truncated_delay,
    loglogistic_cdf,
    report_probability_integrals,
    truncated_loglik,
    window_probability_table,
    window_report_probability,
)


def loglogistic_sample(rng, n, scale, shape):
    v = rng.uniform(size=n)
    return scale * (v / (1 - v)) ** (1 / shape)


def fixed_model(ds, scale=10.0, shape=2.0):
    coef = np.zeros(ds.X_freq.shape[1])
    coef[0] = np.log(scale)
    return LogLogisticDelayModel(coef, np.log(shape), ds.X_freq.shape[1], DayFeatures(kinds=()))


@pytest.fixture(scope="module")
def one_policy():
    pol = pd.DataFrame({"policy_id": ["a"], "start_date": ["2020-01-01"], "end_date": ["2021-01-01"]})
    cl = pd.DataFrame(columns=["policy_id", "occurrence_date", "report_date"])
    return from_frames(pol, cl, "monthly", "2020-07-01", 2)


class TestCdf:
    def test_hand_values(self):
        np.testing.assert_allclose(loglogistic_cdf(30.0, 10.0, 2.0), 0.9, rtol=1e-14)
        np.testing.assert_allclose(loglogistic_cdf(10.0, 10.0, 2.0), 0.5, rtol=1e-14)
        assert loglogistic_cdf(0.0, 10.0, 2.0) == 0.0

    @given(st.floats(0.1, 50.0), st.floats(0.3, 5.0))
    def test_monotone_limits(self, scale, shape):
        u = np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 200), [np.inf]])
        F = loglogistic_cdf(u, scale, shape)
        assert np.all(np.diff(F) >= 0)
        assert F[0] == 0.0 and F[-1] == 1.0

    def test_window_probability(self, one_policy):
        model = fixed_model(one_policy)
        x = one_policy.X_freq[:1]
        np.testing.assert_allclose(window_report_probability(model, 10.0, 30.0, x, 0), 0.4, rtol=1e-12)
        assert window_report_probability(model, 10.0, 10.0, x, 0) == 0.0
        np.testing.assert_allclose(window_report_probability(model, 10.0, 1e300, x, 0), 0.5, rtol=1e-12)
        with pytest.raises(ValueError):
            window_report_probability(model, 30.0, 10.0, x, 0)

    def test_window_partition(self, rng, one_policy):
        model = fixed_model(one_policy, scale=7.0, shape=1.3)
        x = one_policy.X_freq[:1]
        lo = rng.uniform(0, 50, 100)
        hi = lo + rng.uniform(0, 50, 100)
        inside = window_report_probability(model, lo, hi, np.repeat(x, 100, axis=0), np.zeros(100))
        total = inside + model.cdf(lo, np.repeat(x, 100, axis=0), np.zeros(100)) + (1 - model.cdf(hi, np.repeat(x, 100, axis=0), np.zeros(100)))
        np.testing.assert_allclose(total, 1.0, atol=1e-12)


class TestFit:
    def test_gradient_matches_finite_differences(self, rng):
        n = 300
        X = np.column_stack([np.ones(n), rng.normal(size=n)])
        u = loglogistic_sample(rng, n, 5.0, 1.5)
        w = u + rng.exponential(10.0, size=n)
        for trunc in (None, w):
            for _ in range(10):
                theta = rng.normal(scale=0.5, size=3) + np.array([1.5, 0.0, 0.3])
                _, g = truncated_loglik(theta, X, u, trunc)
                fd = optimize.approx_fprime(theta, lambda th: truncated_loglik(th, X, u, trunc)[0], 1e-6)
                np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-4)

    def test_untruncated_recovery(self, rng):
        u = loglogistic_sample(rng, 10_000, 5.0, 1.5)
        fit = fit_truncated_delay(u, np.ones((u.size, 1)))
        assert fit.converged
        assert abs(np.exp(fit.coef[0]) / 5.0 - 1) < 0.05
        assert abs(fit.shape / 1.5 - 1) < 0.05

    def test_truncation_reduces_bias(self, rng):
        u = loglogistic_sample(rng, 10_000, 5.0, 1.5)
        w = rng.uniform(1.0, 15.0, size=u.size)
        keep = u <= w
        X = np.ones((keep.sum(), 1))
        naive = fit_truncated_delay(u[keep], X)
        trunc = fit_truncated_delay(u[keep], X, truncation=w[keep])
        err = lambda f: abs(np.exp(f.coef[0]) - 5.0) / 5.0 + abs(f.shape - 1.5) / 1.5
        assert err(trunc) < 0.1
        assert err(trunc) < err(naive)

    def test_covariate_recovery(self, rng):
        n = 8000
        x = rng.integers(0, 2, size=n)
        u = loglogistic_sample(rng, n, 5.0 * np.exp(0.7 * x), 2.0)
        fit = fit_truncated_delay(u, np.column_stack([np.ones(n), x]))
        assert abs(fit.coef[1] - 0.7) < 0.05

    def test_errors(self):
        with pytest.raises(ValueError):
            fit_truncated_delay([3.0], np.ones((1, 1)))
        with pytest.raises(ValueError):
            fit_truncated_delay([3.0, 0.0], np.ones((2, 1)))
        with pytest.raises(ValueError):
            fit_truncated_delay([3.0, 5.0], np.ones((2, 1)), truncation=[4.0, 4.0])

    def test_dataset_fit(self, small_ll_dataset):
        ds, _ = small_ll_dataset
        fit = fit_dataset_delay(ds)
        assert fit.converged
        assert fit.coef.size == ds.X_freq.shape[1] + fit.day_features.width
        # generator: scale 12 days, shape 1.5
        assert abs(fit.shape / 1.5 - 1) < 0.25


class TestReportProbabilities:
    def test_instant_reporting(self, one_policy):
        R = report_probability_integrals(fixed_model(one_policy, scale=1e-9, shape=5.0), one_policy)
        np.testing.assert_allclose(R[0, :-1], 1.0, atol=1e-12)

    def test_slow_reporting_last_period_small(self, one_policy):
        R = report_probability_integrals(fixed_model(one_policy, scale=1e6, shape=2.0), one_policy)
        assert R[0, -1] < 1e-5

    def test_last_period_against_fine_quadrature(self, one_policy):
        model = fixed_model(one_policy)
        coarse = report_probability_integrals(model, one_policy)
        fine = report_probability_integrals(model, one_policy, refine=10)
        np.testing.assert_allclose(coarse, fine, atol=1e-4)
        # last period (June, 30 days): mean of F(tau - t) at t = day midpoints
        s = np.arange(30) + 0.5
        np.testing.assert_allclose(coarse[0, -1], np.mean(loglogistic_cdf(s, 10.0, 2.0)), rtol=1e-12)

    def test_rows_non_increasing(self, small_ll_dataset):
        ds, _ = small_ll_dataset
        R = report_probability_integrals(fit_dataset_delay(ds, day_kinds=()), ds)
        assert np.all((R >= 0) & (R <= 1))
        assert np.all(np.diff(R, axis=1) <= 1e-12)

    def test_window_table_bounds(self, small_ll_dataset):
        ds, _ = small_ll_dataset
        model = fit_dataset_delay(ds, day_kinds=())
        W = window_probability_table(model, ds, ds.D)
        R = report_probability_integrals(model, ds)
        assert np.all(W >= 0)
        assert np.all(W + R <= 1 + 1e-12)
