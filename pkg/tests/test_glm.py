import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize, stats

from ibnrcox.glm import (
    RankDeficientError,
    binomial_loglik,
    binomial_score,
    dirichlet_loglik,
    dirichlet_score,
    fit_dirichlet_regression,
    fit_weighted_binomial,
    fit_weighted_poisson,
    link_function,
    link_inverse,
    poisson_loglik,
    poisson_score,
)


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def design(rng, n, p):
    return np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])


class TestPoisson:
    def test_weighted_mean(self):
        fit = fit_weighted_poisson(np.ones((3, 1)), [1.0, 2.0, 3.0])
        assert fit.converged
        np.testing.assert_allclose(fit.coef[0], np.log(2.0), atol=1e-10)

    def test_constant_response(self, rng):
        w = rng.uniform(0.1, 3.0, size=10)
        fit = fit_weighted_poisson(np.ones((10, 1)), np.full(10, 0.37), weights=w)
        np.testing.assert_allclose(fit.coef[0], np.log(0.37), atol=1e-10)

    def test_exposure_offset(self, rng):
        y = rng.uniform(0, 4, size=12)
        w = rng.uniform(0.5, 2.0, size=12)
        e = rng.uniform(0.1, 1.0, size=12)
        fit = fit_weighted_poisson(np.ones((12, 1)), y, weights=w, offset=np.log(e))
        np.testing.assert_allclose(fit.coef[0], np.log(np.sum(w * y) / np.sum(w * e)), atol=1e-10)

    def test_score_matches_finite_differences(self, rng):
        X = design(rng, 30, 3)
        y = rng.uniform(0, 3, size=30)
        w = rng.uniform(0, 2, size=30)
        for _ in range(5):
            b = rng.normal(scale=0.5, size=3)
            fd = central_diff(lambda v: poisson_loglik(v, X, y, w), b)
            np.testing.assert_allclose(poisson_score(b, X, y, w), fd, rtol=1e-5, atol=1e-6)

    def test_recovers_coefficients(self, rng):
        X = design(rng, 5000, 3)
        beta = np.array([0.2, -0.4, 0.3])
        y = rng.poisson(np.exp(X @ beta))
        fit = fit_weighted_poisson(X, y)
        assert fit.converged
        np.testing.assert_allclose(fit.coef, beta, atol=0.05)

    def test_loglik_trace_non_decreasing(self, rng):
        X = design(rng, 200, 2)
        y = rng.poisson(np.exp(X @ [1.5, 1.0]))
        fit = fit_weighted_poisson(X, y)
        assert np.all(np.diff(fit.trace) >= -1e-10 * np.abs(fit.trace[1:]))

    def test_zero_weight_and_zero_exposure_rows_ignored(self):
        X = np.ones((4, 1))
        y = np.array([1.0, 3.0, 100.0, 50.0])
        fit = fit_weighted_poisson(X, y, weights=[1, 1, 0, 1], offset=[0, 0, 0, -np.inf])
        np.testing.assert_allclose(fit.coef[0], np.log(2.0), atol=1e-10)

    def test_all_zero_response_not_converged(self):
        fit = fit_weighted_poisson(np.ones((5, 1)), np.zeros(5))
        assert not fit.converged
        assert "zero" in fit.message

    def test_rank_deficient(self):
        X = np.column_stack([np.ones(5), np.ones(5)])
        with pytest.raises(RankDeficientError):
            fit_weighted_poisson(X, np.arange(5.0))

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            fit_weighted_poisson(np.ones((2, 1)), [1.0, 1.0], weights=[1.0, -1.0])

    @given(st.lists(st.floats(0.01, 50.0), min_size=2, max_size=15))
    def test_intercept_is_log_mean(self, ys):
        y = np.array(ys)
        fit = fit_weighted_poisson(np.ones((y.size, 1)), y)
        np.testing.assert_allclose(fit.coef[0], np.log(y.mean()), atol=1e-9)


class TestBinomial:
    def test_logit_intercept(self):
        fit = fit_weighted_binomial(np.ones((2, 1)), [3.0, 3.0], [10.0, 10.0], link="logit")
        np.testing.assert_allclose(fit.coef[0], -0.847298, atol=1e-6)
        np.testing.assert_allclose(fit.coef[0], np.log(0.3 / 0.7), atol=1e-10)

    def test_cloglog_intercept(self):
        s = np.array([2.5, 1.0, 4.2])
        n = np.array([10.0, 7.0, 12.0])
        q = s.sum() / n.sum()
        fit = fit_weighted_binomial(np.ones((3, 1)), s, n, link="cloglog")
        np.testing.assert_allclose(fit.coef[0], np.log(-np.log(1 - q)), atol=1e-10)

    def test_symmetric_logit(self):
        X = np.column_stack([np.ones(4), [-1.0, -1.0, 1.0, 1.0]])
        fit = fit_weighted_binomial(X, [2.0, 2.0, 2.0, 2.0], [4.0, 4.0, 4.0, 4.0], link="logit")
        np.testing.assert_allclose(fit.coef, 0.0, atol=1e-10)

    def test_links_agree_on_pooled_proportion(self):
        s, n = np.array([1.3, 2.2]), np.array([5.0, 6.0])
        q = s.sum() / n.sum()
        for link in ("logit", "cloglog", "log"):
            fit = fit_weighted_binomial(np.ones((2, 1)), s, n, link=link)
            np.testing.assert_allclose(link_inverse(fit.coef, link), q, atol=1e-10)

    @pytest.mark.parametrize("link", ["logit", "cloglog", "log"])
    def test_score_matches_finite_differences(self, rng, link):
        X = design(rng, 25, 3)
        n = rng.uniform(1, 10, size=25)
        s = n * rng.uniform(0, 1, size=25)
        for _ in range(5):
            b = rng.normal(scale=0.3, size=3)
            if link == "log":
                b[0] = -4.0  # keep q = exp(eta) inside (0, 1)
            fd = central_diff(lambda v: binomial_loglik(v, X, s, n, link), b)
            np.testing.assert_allclose(binomial_score(b, X, s, n, link), fd, rtol=1e-5, atol=1e-6)

    def test_cloglog_score_finite_when_q_rounds_to_one(self):
        # exp(-exp(4)) is below double precision, so q == 1.0 exactly
        X = np.ones((1, 1))
        score = binomial_score(np.array([4.0]), X, [2.0], [3.0], "cloglog")
        np.testing.assert_allclose(score, [-np.exp(4.0)], rtol=1e-10)

    def test_boundary_flagged(self):
        fit = fit_weighted_binomial(np.ones((3, 1)), [0.0, 0.0, 0.0], [2.0, 3.0, 1.0], link="cloglog")
        assert not fit.converged
        assert "boundary" in fit.message

    def test_successes_exceed_trials(self):
        with pytest.raises(ValueError):
            fit_weighted_binomial(np.ones((1, 1)), [3.0], [2.0])

    def test_unknown_link(self):
        with pytest.raises(ValueError):
            fit_weighted_binomial(np.ones((1, 1)), [1.0], [2.0], link="probit")

    @given(st.floats(-6, 3))
    def test_link_round_trip(self, eta):
        for link in ("logit", "cloglog"):
            np.testing.assert_allclose(link_function(link_inverse(eta, link), link), eta, atol=1e-8)


class TestDirichlet:
    def test_loglik_matches_scipy(self, rng):
        X = design(rng, 6, 2)
        coef = rng.normal(scale=0.3, size=(3, 2))
        P = rng.dirichlet(np.ones(3), size=6)
        eta = np.exp(X @ coef.T)
        expected = sum(stats.dirichlet.logpdf(P[k], eta[k]) for k in range(6))
        np.testing.assert_allclose(dirichlet_loglik(coef, X, np.log(P)), expected, rtol=1e-10)

    def test_score_matches_finite_differences(self, rng):
        X = design(rng, 20, 2)
        L = np.log(rng.dirichlet(np.ones(4), size=20))
        w = rng.uniform(0.5, 2.0, size=20)
        for _ in range(5):
            c = rng.normal(scale=0.5, size=(4, 2))
            fd = central_diff(lambda v: dirichlet_loglik(v, X, L, w), c)
            np.testing.assert_allclose(dirichlet_score(c, X, L, w), fd, rtol=1e-5, atol=1e-6)

    def test_symmetric_rows(self):
        P = np.full((5, 2), 0.5)
        P[::2] = [0.45, 0.55]
        P[1::2] = [0.55, 0.45]
        fit = fit_dirichlet_regression(np.ones((5, 1)), P)
        eta = fit.eta(np.ones((1, 1)))[0]
        assert abs(eta[0] / eta.sum() - 0.5) < 0.02

    def test_exact_half_rows_mean(self):
        fit = fit_dirichlet_regression(np.ones((4, 1)), np.full((4, 2), 0.5), max_iter=50)
        eta = fit.eta(np.ones((1, 1)))[0]
        np.testing.assert_allclose(eta / eta.sum(), [0.5, 0.5], atol=1e-6)

    def test_recovers_dirichlet_2_1_1(self):
        rng = np.random.default_rng(2024)
        P = rng.dirichlet([2.0, 1.0, 1.0], size=10_000)
        fit = fit_dirichlet_regression(np.ones((10_000, 1)), P)
        eta = fit.eta(np.ones((1, 1)))[0]
        np.testing.assert_allclose(eta, [2.0, 1.0, 1.0], rtol=0.1)
        # independent oracle: Nelder-Mead on scipy's log-density from another start
        L = np.log(P)

        def neg(logeta):
            return -np.sum(stats.dirichlet.logpdf(P.T, np.exp(logeta)))

        ref = optimize.minimize(neg, np.zeros(3), method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 5000})
        np.testing.assert_allclose(eta, np.exp(ref.x), atol=1e-4)
        assert dirichlet_loglik(np.log(eta)[:, None], np.ones((10_000, 1)), L) >= -ref.fun - 1e-6

    def test_single_weighted_row_rejected(self, rng):
        P = rng.dirichlet(np.ones(3), size=4)
        with pytest.raises(ValueError):
            fit_dirichlet_regression(np.ones((4, 1)), P, weights=[0, 0, 1, 0])

    def test_off_simplex_row(self):
        with pytest.raises(ValueError, match="row 1"):
            fit_dirichlet_regression(np.ones((2, 1)), [[0.5, 0.5], [0.6, 0.6]])

    def test_near_simplex_renormalized(self, rng):
        P = rng.dirichlet([3.0, 2.0], size=50)
        P[0] *= 1 + 5e-10
        fit_dirichlet_regression(np.ones((50, 1)), P)

    def test_covariate_effect(self):
        rng = np.random.default_rng(5)
        x = rng.integers(0, 2, size=4000).astype(float)
        X = np.column_stack([np.ones_like(x), x])
        coef = np.array([[1.0, 0.5], [0.3, -0.4], [0.0, 0.2]])
        eta = np.exp(X @ coef.T)
        P = np.array([rng.dirichlet(e) for e in eta])
        fit = fit_dirichlet_regression(X, P)
        np.testing.assert_allclose(fit.coef, coef, atol=0.1)
