"""Discrete reporting-delay machinery.

Lag probabilities ``p = (p_0, ..., p_D)`` live on the simplex; the
conditional probabilities ``q_d = p_d / (p_0 + ... + p_d)`` for ``d >= 1``
give the sequential-binomial parametrisation.  Under a Dirichlet prior on
``p`` the posterior given a partially observed run-off row is not Dirichlet,
because the Poisson count of reported claims tilts the reported mass
``p^r = p_0 + ... + p_k`` by ``exp(-lambda p^r)``.  Everything
non-conjugate about it is therefore one-dimensional: given ``p^r`` the
observed and censored blocks are independent Dirichlet vectors.  The
functions below exploit that through a series representation of the
tilted beta law of ``p^r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, digamma, gammaln, xlogy


class PosteriorSamplingError(RuntimeError):
    """Raised when rejection sampling would be hopelessly inefficient."""


# ---------------------------------------------------------------------------
# q <-> p
# ---------------------------------------------------------------------------


def q_to_p(q) -> np.ndarray:
    """Lag probabilities from conditional probabilities.

    ``p_D = q_D`` and, going down, ``p_d = q_d (1 - p_{d+1} - ... - p_D)``;
    ``p_0`` takes the remainder.  Works on the last axis.
    """
    q = np.asarray(q, dtype=float)
    one_minus = 1.0 - q
    # survival[..., d] = prod_{j > d} (1 - q_j) for d = 0..D
    rev = np.cumprod(one_minus[..., ::-1], axis=-1)[..., ::-1]
    survival = np.concatenate([rev, np.ones(q.shape[:-1] + (1,))], axis=-1)
    p = np.empty(q.shape[:-1] + (q.shape[-1] + 1,))
    p[..., 0] = survival[..., 0]
    p[..., 1:] = q * survival[..., 1:]
    return p


def p_to_q(p) -> np.ndarray:
    """Conditional probabilities ``q_d = p_d / sum_{j<=d} p_j``; zero where undefined."""
    p = np.asarray(p, dtype=float)
    cum = np.cumsum(p, axis=-1)[..., 1:]
    num = p[..., 1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(cum > 0, num / np.where(cum > 0, cum, 1.0), 0.0)
    return np.clip(q, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Likelihood forms
# ---------------------------------------------------------------------------


def multinomial_delay_loglik(z, p, k: int) -> float:
    """Log multinomial pmf of lags ``0..k`` with probabilities ``p_d / p^r``.

    Returns ``-inf`` when ``p^r = 0`` but claims were observed.
    """
    z = np.asarray(z, dtype=float)[: k + 1]
    p = np.asarray(p, dtype=float)[: k + 1]
    n = z.sum()
    pr = p.sum()
    if pr <= 0:
        return 0.0 if n == 0 else -np.inf
    with np.errstate(divide="ignore"):
        return float(gammaln(n + 1) - gammaln(z + 1).sum() + xlogy(z, p / pr).sum())


def _xlog_ratio(n, log_num, log_den):
    # n * (log_num - log_den) with 0 * log 0 = 0
    return np.where(n > 0, n * (log_num - np.where(np.isfinite(log_den), log_den, 0.0)), 0.0)


def binomial_delay_loglik(z, p, k: int) -> float:
    """The same quantity written as sequential binomials in ``q``.

    Lag ``d`` contributes ``Binomial(z_d; z_0 + ... + z_d, q_d)`` for ``1 <= d <= k``.
    """
    z = np.asarray(z, dtype=float)[: k + 1]
    p = np.asarray(p, dtype=float)[: k + 1]
    cum = np.cumsum(z)[1:]
    s = z[1:]
    f = cum - s
    log_coef = gammaln(cum + 1) - gammaln(s + 1) - gammaln(f + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        # q_d = p_d / S_d and 1 - q_d = S_{d-1} / S_d, kept as ratios to avoid 1 - q round-off
        log_S = np.log(np.cumsum(p))
        terms = log_coef + _xlog_ratio(s, np.log(p[1:]), log_S[1:]) + _xlog_ratio(f, log_S[:-1], log_S[1:])
    return float(terms.sum())


def beta_binomial_loglik(z_d, cum_before, a, b) -> np.ndarray:
    """Log beta-binomial pmf of ``z_d`` successes in ``z_d + cum_before`` trials.

    ``a`` and ``b`` are the beta parameters of the success probability; for
    lag ``d`` of a Dirichlet they come from :func:`dirichlet_to_beta`.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("beta parameters must be positive")
    z = np.asarray(z_d, dtype=float)
    c = np.asarray(cum_before, dtype=float)
    log_coef = gammaln(z + c + 1) - gammaln(z + 1) - gammaln(c + 1)
    return log_coef + betaln(z + a, c + b) - betaln(a, b)


def dirichlet_to_beta(eta, d: int) -> tuple[float, float]:
    """Beta law of ``q_d`` under ``p ~ Dirichlet(eta)``: ``(eta_d, eta_0 + ... + eta_{d-1})``."""
    eta = np.asarray(eta, dtype=float)
    if not 1 <= d <= eta.size - 1:
        raise ValueError("lag must satisfy 1 <= d <= D")
    return float(eta[d]), float(eta[:d].sum())


def dirichlet_multinomial_loglik(z, eta) -> np.ndarray:
    """Log Dirichlet-multinomial pmf along the last axis."""
    z = np.asarray(z, dtype=float)
    eta = np.asarray(eta, dtype=float)
    n = z.sum(axis=-1)
    return (
        gammaln(n + 1)
        - gammaln(z + 1).sum(axis=-1)
        + gammaln(eta.sum(axis=-1))
        - gammaln(n + eta.sum(axis=-1))
        + (gammaln(z + eta) - gammaln(eta)).sum(axis=-1)
    )


# ---------------------------------------------------------------------------
# Tilted beta law of the reported mass
# ---------------------------------------------------------------------------


def _series_grid(lam: np.ndarray) -> np.ndarray:
    kmax = int(np.ceil(np.max(lam + 10.0 * np.sqrt(lam) + 50.0))) if lam.size else 50
    return np.arange(kmax + 1, dtype=float)


def _series_log_terms(a, b, lam, k):
    """``log[lam^k / k! * B(a, b + k) / B(a, b)]`` on a (cells, K) grid."""
    a = a[:, None]
    b = b[:, None]
    lk = xlogy(k[None, :], lam[:, None]) - gammaln(k + 1.0)[None, :]
    return lk + betaln(a, b + k[None, :]) - betaln(a, b)


def tilted_beta_log_normalizer(a, b, lam) -> np.ndarray:
    """``log E[exp(-lam X)]`` for ``X ~ Beta(a, b)``, elementwise.

    Uses ``exp(-lam x) = exp(-lam) sum_k lam^k (1-x)^k / k!``, which turns
    the tilted law into a mixture of ``Beta(a, b + k)``.  ``b = 0`` means a
    point mass at one.
    """
    a, b, lam = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, lam)))
    out = np.empty(a.shape)
    flat_a, flat_b, flat_l = a.ravel(), b.ravel(), lam.ravel()
    res = out.reshape(-1)
    point = flat_b <= 0
    res[point] = -flat_l[point]
    idx = np.flatnonzero(~point)
    for chunk in _chunks(idx, flat_l):
        k = _series_grid(flat_l[chunk])
        terms = _series_log_terms(flat_a[chunk], flat_b[chunk], flat_l[chunk], k)
        res[chunk] = -flat_l[chunk] + _lse_rows(terms)
    return out


def _lse_rows(x):
    mx = np.max(x, axis=1, keepdims=True)
    return (np.log(np.sum(np.exp(x - mx), axis=1, keepdims=True)) + mx)[:, 0]


def _chunks(idx, lam, budget=2_000_000):
    if idx.size == 0:
        return
    order = idx[np.argsort(lam[idx], kind="stable")]
    start = 0
    while start < order.size:
        stop = start + 1
        while stop < order.size:
            k = lam[order[stop]] + 10 * np.sqrt(lam[order[stop]]) + 51
            if (stop - start + 1) * k > budget:
                break
            stop += 1
        yield order[start:stop]
        start = stop


@dataclass
class TiltedBetaMoments:
    log_normalizer: np.ndarray
    mean: np.ndarray
    mean_log: np.ndarray
    mean_log1m: np.ndarray


def tilted_beta_moments(a, b, lam) -> TiltedBetaMoments:
    """Moments of ``X`` with density proportional to ``x^(a-1) (1-x)^(b-1) exp(-lam x)``.

    ``b = 0`` is the point mass at one (nothing censored).
    """
    a, b, lam = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, lam)))
    shape = a.shape
    fa, fb, fl = a.ravel(), b.ravel(), lam.ravel()
    logz = np.empty(fa.size)
    mean = np.ones(fa.size)
    mlog = np.zeros(fa.size)
    mlog1m = np.full(fa.size, -np.inf)
    point = fb <= 0
    logz[point] = -fl[point]
    for chunk in _chunks(np.flatnonzero(~point), fl):
        k = _series_grid(fl[chunk])
        ca, cb = fa[chunk][:, None], fb[chunk][:, None]
        terms = _series_log_terms(fa[chunk], fb[chunk], fl[chunk], k)
        lse = _lse_rows(terms)
        w = np.exp(terms - lse[:, None])
        tot = ca + cb + k[None, :]
        logz[chunk] = -fl[chunk] + lse
        mean[chunk] = np.sum(w * ca / tot, axis=1)
        dg_tot = digamma(tot)
        mlog[chunk] = np.sum(w * (digamma(ca) - dg_tot), axis=1)
        mlog1m[chunk] = np.sum(w * (digamma(cb + k[None, :]) - dg_tot), axis=1)
    return TiltedBetaMoments(
        logz.reshape(shape), mean.reshape(shape), mlog.reshape(shape), mlog1m.reshape(shape)
    )


def sample_tilted_beta(a, b, lam, size: int, rng: np.random.Generator, method="auto"):
    """Draws from the tilted beta law, one row of ``size`` draws per cell.

    ``method="rejection"`` proposes from ``Beta(a, b)`` and accepts with
    probability ``exp(-lam x)``; ``"series"`` samples the mixture index
    first.  ``"auto"`` uses rejection where its acceptance rate, known in
    closed form, is at least 5%.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    n = a.size
    out = np.ones((n, size))
    live = b > 0
    if method == "auto":
        acc = np.exp(tilted_beta_log_normalizer(a, np.where(live, b, 1.0), lam))
        use_rej = live & (acc >= 0.05)
    elif method == "rejection":
        use_rej = live
    elif method == "series":
        use_rej = np.zeros(n, dtype=bool)
    else:
        raise ValueError(f"unknown method {method!r}")
    rej = np.flatnonzero(use_rej)
    if rej.size:
        out[rej] = _rejection_tilted(a[rej], b[rej], lam[rej], size, rng)
    for i in np.flatnonzero(live & ~use_rej):
        k = _series_grid(lam[i : i + 1])
        terms = _series_log_terms(a[i : i + 1], b[i : i + 1], lam[i : i + 1], k)[0]
        w = np.exp(terms - terms.max())
        cdf = np.cumsum(w)
        cdf /= cdf[-1]
        ks = np.minimum(np.searchsorted(cdf, rng.random(size), side="right"), k.size - 1)
        out[i] = rng.beta(a[i], b[i] + k[ks])
    return out


def _rejection_tilted(a, b, lam, size, rng, max_rounds=10_000):
    n = a.size
    out = np.empty((n, size))
    filled = np.zeros(n, dtype=np.int64)
    for _ in range(max_rounds):
        need = np.flatnonzero(filled < size)
        if need.size == 0:
            return out
        x = rng.beta(a[need][:, None], b[need][:, None], size=(need.size, size))
        u = rng.random((need.size, size))
        accept = u <= np.exp(-lam[need][:, None] * x)
        for r, i in enumerate(need):
            got = x[r, accept[r]]
            take = min(got.size, size - filled[i])
            out[i, filled[i] : filled[i] + take] = got[:take]
            filled[i] += take
    raise PosteriorSamplingError("rejection sampler did not fill its quota")


# ---------------------------------------------------------------------------
# Posterior of p given a partially observed run-off row
# ---------------------------------------------------------------------------


@dataclass
class PosteriorSpec:
    """Inputs of the posterior of ``p`` for one policy-period cell.

    Attributes
    ----------
    eta : ndarray, shape (D+1,)
        Dirichlet parameters.
    z_obs : ndarray, shape (k+1,)
        Counts at the observable lags ``0..k``.
    weights : ndarray, shape (g,)
        Mixing weights over the hidden states.
    means : ndarray, shape (g,)
        Poisson means ``e * lambda_j`` of the total count in each state.
    """

    eta: np.ndarray
    z_obs: np.ndarray
    weights: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        self.z_obs = np.asarray(self.z_obs, dtype=float)
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.means = np.atleast_1d(np.asarray(self.means, dtype=float))
        if np.any(self.eta <= 0):
            raise ValueError("Dirichlet parameters must be positive")
        if not 1 <= self.z_obs.size <= self.eta.size:
            raise ValueError("observed lags must lie within 0..D")
        if self.weights.shape != self.means.shape:
            raise ValueError("weights and means need one entry per state")
        if np.any(self.means < 0):
            raise ValueError("means must be non-negative")

    @property
    def k(self) -> int:
        return self.z_obs.size - 1

    @property
    def n_r(self) -> float:
        return float(self.z_obs.sum())

    def proposal_params(self) -> np.ndarray:
        alpha = self.eta.copy()
        alpha[: self.k + 1] += self.z_obs
        return alpha

    def log_bound(self) -> float:
        """Log of ``sum_j w_j lambda_j^n``, an upper bound on the tilt factor."""
        with np.errstate(divide="ignore"):
            return float(_lse(np.log(self.weights) + xlogy(self.n_r, self.means)))

    def log_tilt(self, pr) -> np.ndarray:
        """``log sum_j w_j lambda_j^n exp(-lambda_j p^r)`` at each ``p^r``."""
        pr = np.asarray(pr, dtype=float)[..., None]
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights) + xlogy(self.n_r, self.means)
        return _lse_last(lw - self.means * pr)

    def component_log_mass(self) -> np.ndarray:
        """Log posterior mass of each state, up to a common constant."""
        alpha = self.proposal_params()
        a = alpha[: self.k + 1].sum()
        b = alpha[self.k + 1 :].sum()
        with np.errstate(divide="ignore"):
            lw = np.log(self.weights) + xlogy(self.n_r, self.means)
        return lw + tilted_beta_log_normalizer(np.full_like(self.means, a), b, self.means)

    def acceptance_rate(self) -> float:
        """Exact acceptance probability of the rejection sampler."""
        return float(np.exp(_lse(self.component_log_mass()) - self.log_bound()))


def _lse(x):
    x = np.asarray(x, dtype=float)
    mx = np.max(x)
    if not np.isfinite(mx):
        return mx
    return float(np.log(np.sum(np.exp(x - mx))) + mx)


def _lse_last(x):
    mx = np.max(x, axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(x - mx), axis=-1)) + mx[..., 0]


def posterior_log_density(spec: PosteriorSpec, p) -> np.ndarray:
    """Unnormalised log posterior of ``p``: Dirichlet kernel times state-mixed tilt."""
    p = np.asarray(p, dtype=float)
    alpha = spec.proposal_params()
    with np.errstate(divide="ignore"):
        log_h = np.sum(xlogy(alpha - 1.0, p), axis=-1)
    pr = p[..., : spec.k + 1].sum(axis=-1)
    return log_h + spec.log_tilt(pr)


@dataclass
class PosteriorSample:
    draws: np.ndarray
    acceptance_rate: float
    method: str
    proposals: int = 0
    max_ratio: float = float("nan")


def sample_posterior(
    spec: PosteriorSpec,
    n_samples: int,
    rng: np.random.Generator | int | None = None,
    method: str = "auto",
    probe: int = 100,
    min_acceptance: float = 1e-4,
) -> PosteriorSample:
    """Independent draws of ``p`` from its posterior.

    ``"rejection"`` proposes from the Dirichlet kernel with the observed
    counts added and accepts with probability ``g(p) / sup g``, where the
    supremum is replaced by the bound ``sum_j w_j lambda_j^n``.  ``"exact"``
    draws the state, then ``p^r`` from its tilted beta law, then the
    observed and censored blocks from their Dirichlet laws.  ``"auto"``
    uses rejection unless its (exactly computable) acceptance rate is below
    5%.  ``max_ratio`` records the largest ``g(p) / bound`` seen, which
    never exceeds one.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.default_rng(rng)
    rate = spec.acceptance_rate()
    if method == "auto":
        method = "rejection" if rate >= 0.05 else "exact"
    if method == "rejection":
        return _sample_rejection(spec, n_samples, rng, rate, probe, min_acceptance)
    if method == "exact":
        return PosteriorSample(_sample_exact(spec, n_samples, rng), rate, "exact")
    raise ValueError(f"unknown method {method!r}")


def _sample_rejection(spec, n_samples, rng, rate, probe, min_acceptance):
    alpha = spec.proposal_params()
    log_bound = spec.log_bound()
    kept = []
    total = 0
    n_acc = 0
    max_ratio = 0.0
    batch = probe
    first = True
    while n_acc < n_samples:
        p = rng.dirichlet(alpha, size=batch)
        ratio = np.exp(spec.log_tilt(p[:, : spec.k + 1].sum(axis=1)) - log_bound)
        max_ratio = max(max_ratio, float(ratio.max()))
        acc = rng.random(batch) <= ratio
        kept.append(p[acc])
        n_acc += int(acc.sum())
        total += batch
        if first:
            first = False
            if rate < min_acceptance:
                raise PosteriorSamplingError(
                    f"acceptance rate {rate:.2e} below {min_acceptance:.0e} "
                    f"({int(acc.sum())}/{batch} accepted in the probe batch); "
                    "check the state means and Dirichlet parameters"
                )
        remaining = n_samples - n_acc
        batch = int(min(max(remaining / max(rate, 1e-6) * 1.2, 100), 1_000_000))
    draws = np.concatenate(kept)[:n_samples]
    return PosteriorSample(draws, n_acc / total, "rejection", total, max_ratio)


def _sample_exact(spec, n_samples, rng):
    alpha = spec.proposal_params()
    k = spec.k
    D = spec.eta.size - 1
    lm = spec.component_log_mass()
    probs = np.exp(lm - _lse(lm))
    states = rng.choice(probs.size, size=n_samples, p=probs / probs.sum())
    a = alpha[: k + 1].sum()
    b = alpha[k + 1 :].sum()
    x = np.ones(n_samples)
    if k < D:
        for j in np.unique(states):
            sel = states == j
            x[sel] = sample_tilted_beta(a, b, spec.means[j], int(sel.sum()), rng)[0]
    draws = np.empty((n_samples, D + 1))
    draws[:, : k + 1] = x[:, None] * rng.dirichlet(alpha[: k + 1], size=n_samples)
    if k < D:
        draws[:, k + 1 :] = (1.0 - x)[:, None] * rng.dirichlet(alpha[k + 1 :], size=n_samples)
    return draws
