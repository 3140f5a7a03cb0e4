import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import comb

from ibnrcox.delay_discrete import (
    PosteriorSamplingError,
    PosteriorSpec,
    beta_binomial_loglik,
    binomial_delay_loglik,
    dirichlet_multinomial_loglik,
    dirichlet_to_beta,
    multinomial_delay_loglik,
    p_to_q,
    posterior_log_density,
    q_to_p,
    sample_posterior,
    sample_tilted_beta,
    tilted_beta_log_normalizer,
    tilted_beta_moments,
)

simplex = st.integers(1, 6).flatmap(
    lambda D: st.lists(st.floats(0.01, 10.0), min_size=D + 1, max_size=D + 1)
).map(lambda v: np.array(v) / np.sum(v))


class TestQP:
    def test_hand_case(self):
        np.testing.assert_allclose(q_to_p([0.2, 0.1]), [0.72, 0.18, 0.10], atol=1e-15)
        np.testing.assert_allclose(p_to_q([0.72, 0.18, 0.10]), [0.2, 0.1], atol=1e-15)

    def test_no_delay(self):
        np.testing.assert_array_equal(q_to_p([0.0]), [1.0, 0.0])
        np.testing.assert_array_equal(p_to_q([1.0, 0.0, 0.0]), [0.0, 0.0])

    def test_all_mass_at_max_lag(self):
        np.testing.assert_array_equal(q_to_p([1.0, 1.0, 1.0]), [0.0, 0.0, 0.0, 1.0])

    def test_zero_cumulative_gives_zero(self):
        np.testing.assert_array_equal(p_to_q([0.0, 0.0, 1.0]), [0.0, 1.0])

    def test_vectorised(self, rng):
        P = rng.dirichlet(np.ones(4), size=7)
        np.testing.assert_allclose(q_to_p(p_to_q(P)), P, atol=1e-12)

    @given(simplex)
    def test_round_trip(self, p):
        np.testing.assert_allclose(q_to_p(p_to_q(p)), p, atol=1e-12)
        assert abs(q_to_p(p_to_q(p)).sum() - 1.0) < 1e-12

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=8))
    def test_q_to_p_on_simplex(self, q):
        p = q_to_p(q)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(), 1.0, atol=1e-12)


class TestLikelihoodForms:
    def test_single_claim(self):
        np.testing.assert_allclose(multinomial_delay_loglik([1, 0], [0.8, 0.2], 1), np.log(0.8), rtol=1e-14)

    def test_hand_multinomial(self):
        np.testing.assert_allclose(multinomial_delay_loglik([2, 1], [0.5, 0.5], 1), np.log(0.375), rtol=1e-14)

    def test_truncation_renormalizes(self):
        p = np.array([0.5, 0.3, 0.2])
        np.testing.assert_allclose(multinomial_delay_loglik([1, 1, 0], p, 1), np.log(2 * 0.5 * 0.3 / 0.8**2), rtol=1e-14)

    def test_zero_reported_mass(self):
        assert multinomial_delay_loglik([1, 0], [0.0, 1.0], 0) == -np.inf

    def test_matches_sequential_binomials(self, rng):
        for _ in range(200):
            D = rng.integers(1, 8)
            p = rng.dirichlet(np.ones(D + 1))
            k = rng.integers(0, D + 1)
            z = rng.poisson(3.0, size=D + 1)
            np.testing.assert_allclose(multinomial_delay_loglik(z, p, k), binomial_delay_loglik(z, p, k), atol=1e-10)

    def test_forms_agree_with_tiny_early_lags(self):
        # q_1 within 1e-8 of one: 1 - q must not be formed by subtraction
        p = np.array([1e-8, 0.3, 0.7 - 1e-8])
        z = [3, 12, 9]
        np.testing.assert_allclose(multinomial_delay_loglik(z, p, 2), binomial_delay_loglik(z, p, 2), atol=1e-10)

    def test_beta_binomial_uniform(self):
        m = 6
        vals = np.exp(beta_binomial_loglik(np.arange(m + 1), m - np.arange(m + 1), 1.0, 1.0))
        np.testing.assert_allclose(vals, 1.0 / (m + 1), rtol=1e-12)

    def test_beta_binomial_empty(self):
        assert beta_binomial_loglik(0, 0, 2.0, 3.0) == 0.0

    def test_beta_binomial_one_trial(self):
        # eta_d = 2 and the lags below d sum to 3: success probability 2 / 5
        np.testing.assert_allclose(beta_binomial_loglik(1, 0, 2.0, 3.0), np.log(0.4), rtol=1e-14)

    def test_beta_binomial_matches_scipy(self):
        np.testing.assert_allclose(beta_binomial_loglik(3, 4, 1.7, 2.2), stats.betabinom.logpmf(3, 7, 1.7, 2.2), rtol=1e-12)

    def test_beta_binomial_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            beta_binomial_loglik(1, 1, 0.0, 1.0)

    def test_beta_binomial_marginalizes_beta(self, rng):
        eta = np.array([3.0, 1.5, 2.0])
        a, b = dirichlet_to_beta(eta, 2)
        q = p_to_q(rng.dirichlet(eta, size=200_000))[:, 1]
        mc = comb(5, 2) * q**2 * (1 - q) ** 3
        se = mc.std() / np.sqrt(mc.size)
        assert abs(mc.mean() - np.exp(beta_binomial_loglik(2, 3, a, b))) < 3 * se

    def test_dirichlet_to_beta(self):
        assert dirichlet_to_beta([1.0, 1.0], 1) == (1.0, 1.0)
        assert dirichlet_to_beta([2.0, 3.0, 4.0], 2) == (4.0, 5.0)
        with pytest.raises(ValueError):
            dirichlet_to_beta([1.0, 1.0], 0)

    def test_dirichlet_multinomial_sums_to_one(self):
        eta = np.array([1.5, 0.7, 2.0])
        total = 0.0
        for a in range(5):
            for b in range(5 - a):
                total += np.exp(dirichlet_multinomial_loglik([a, b, 4 - a - b], eta))
        np.testing.assert_allclose(total, 1.0, rtol=1e-12)


class TestTiltedBeta:
    @pytest.mark.parametrize("a,b,lam", [(2.0, 3.0, 0.5), (0.7, 1.3, 8.0), (5.0, 0.4, 40.0)])
    def test_against_quadrature(self, a, b, lam):
        dens = lambda x: x ** (a - 1) * (1 - x) ** (b - 1) * np.exp(-lam * x)
        Z = integrate.quad(dens, 0, 1, limit=200)[0]
        m = integrate.quad(lambda x: x * dens(x), 0, 1, limit=200)[0] / Z
        ml = integrate.quad(lambda x: np.log(x) * dens(x), 0, 1, limit=200)[0] / Z
        from scipy.special import betaln

        np.testing.assert_allclose(tilted_beta_log_normalizer(a, b, lam), np.log(Z) - betaln(a, b), rtol=1e-8)
        mom = tilted_beta_moments(a, b, lam)
        np.testing.assert_allclose(mom.mean, m, rtol=1e-8)
        np.testing.assert_allclose(mom.mean_log, ml, rtol=1e-7)

    def test_zero_tilt_is_beta(self):
        mom = tilted_beta_moments(2.0, 3.0, 0.0)
        np.testing.assert_allclose(mom.mean, 0.4, rtol=1e-12)
        np.testing.assert_allclose(mom.log_normalizer, 0.0, atol=1e-12)

    def test_point_mass(self):
        mom = tilted_beta_moments(2.0, 0.0, 3.0)
        assert mom.mean == 1.0
        np.testing.assert_allclose(mom.log_normalizer, -3.0)

    @pytest.mark.parametrize("method", ["rejection", "series"])
    def test_sampler_mean(self, rng, method):
        a, b, lam = 1.5, 2.5, 4.0
        x = sample_tilted_beta(a, b, lam, 40_000, rng, method=method)[0]
        m = tilted_beta_moments(a, b, lam).mean
        assert abs(x.mean() - m) < 3 * x.std() / np.sqrt(x.size)


def conjugate_spec(rng, D=3):
    eta = rng.uniform(0.5, 3.0, size=D + 1)
    z = rng.integers(0, 5, size=D + 1)
    return PosteriorSpec(eta, z, [0.4, 0.6], [2.0, 6.0])


class TestPosterior:
    def test_conjugate_density_ratio(self, rng):
        spec = conjugate_spec(rng)
        p1, p2 = rng.dirichlet(np.ones(4), size=2)
        ref = stats.dirichlet.logpdf(p1, spec.eta + spec.z_obs) - stats.dirichlet.logpdf(p2, spec.eta + spec.z_obs)
        got = posterior_log_density(spec, p1) - posterior_log_density(spec, p2)
        np.testing.assert_allclose(got, ref, atol=1e-10)

    def test_zero_mean_reduces_to_kernel(self, rng):
        spec = PosteriorSpec([1.0, 2.0, 3.0], [2], [1.0], [0.0])
        p = rng.dirichlet(np.ones(3))
        np.testing.assert_allclose(posterior_log_density(spec, p), stats.dirichlet.logpdf(p, [3.0, 2.0, 3.0]) - stats.dirichlet.logpdf(np.array([1 / 3] * 3), [3.0, 2.0, 3.0]) + posterior_log_density(spec, np.array([1 / 3] * 3)), atol=1e-10)

    def test_tilt_decreasing_without_reports(self):
        spec = PosteriorSpec([1.0, 1.0, 1.0], [0], [0.5, 0.5], [1.0, 3.0])
        vals = spec.log_tilt(np.linspace(0, 1, 11))
        assert np.all(np.diff(vals) < 0)

    def test_constant_tilt_accepts_everything(self, rng):
        spec = PosteriorSpec([1.0, 2.0, 1.0], [0], [1.0], [0.0])
        out = sample_posterior(spec, 500, rng, method="rejection")
        assert out.acceptance_rate == 1.0

    def test_conjugate_moments(self, rng):
        spec = conjugate_spec(rng)
        out = sample_posterior(spec, 20_000, rng, method="rejection")
        alpha = spec.eta + spec.z_obs
        mean = alpha / alpha.sum()
        se = out.draws.std(axis=0) / np.sqrt(out.draws.shape[0])
        assert np.all(np.abs(out.draws.mean(axis=0) - mean) < 3 * se)

    def test_rejection_agrees_with_exact(self, rng):
        spec = PosteriorSpec([1.2, 0.8, 0.5], [3], [0.3, 0.7], [1.5, 5.0])
        rej = sample_posterior(spec, 20_000, rng, method="rejection").draws[:, 0]
        exa = sample_posterior(spec, 20_000, rng, method="exact").draws[:, 0]
        se = np.sqrt(rej.var() / rej.size + exa.var() / exa.size)
        assert abs(rej.mean() - exa.mean()) < 3 * se
        assert abs(spec.acceptance_rate() - sample_posterior(spec, 20_000, rng, method="rejection").acceptance_rate) < 0.02

    def test_bound_holds(self, rng):
        spec = PosteriorSpec([0.9, 0.6, 0.4], [2, 1], [0.5, 0.5], [0.5, 7.0])
        out = sample_posterior(spec, 5000, rng, method="rejection")
        assert out.max_ratio <= 1.0

    def test_pathological_spec_raises(self, rng):
        spec = PosteriorSpec([50.0, 0.01, 0.01], [0], [1.0], [3000.0])
        with pytest.raises(PosteriorSamplingError):
            sample_posterior(spec, 10, rng, method="rejection")

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            PosteriorSpec([0.0, 1.0], [1], [1.0], [1.0])
        with pytest.raises(ValueError):
            PosteriorSpec([1.0, 1.0], [1, 1, 1], [1.0], [1.0])
        with pytest.raises(ValueError):
            sample_posterior(PosteriorSpec([1.0, 1.0], [1], [1.0], [1.0]), 0)
