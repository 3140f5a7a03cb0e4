"""Estimator classes with the scikit-learn ``fit`` / ``predict`` / ``get_params`` API.

``fit`` takes an :class:`~ibnrcox.data.ObservedDataset`; ``predict``
returns an :class:`~ibnrcox.predict.IbnrEstimate` for the dataset's
valuation date.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import ObservedDataset
from .em.common import EMData, FitOptions, FitResult
from .em.continuous import fit_cm
from .em.dirichlet import fit_dm
from .em.multinomial import fit_mm
from .em.selection import select_g
from .predict import IbnrEstimate, chain_ladder, runoff_triangle, simulate_ibnr, tail_beyond_D


def _check_dataset(dataset) -> ObservedDataset:
    if not isinstance(dataset, ObservedDataset):
        raise TypeError("expected an ObservedDataset; build one with ibnrcox.data.ingest or from_frames")
    return dataset


class _HmmReservingModel(BaseEstimator):
    kind = ""

    def _options(self) -> FitOptions:
        names = FitOptions.__dataclass_fields__
        values = {k: v for k, v in self.get_params().items() if k in names}
        values["g"] = self.g
        return FitOptions(**values)

    def _fit_one(self, dataset, data, options) -> FitResult:
        raise NotImplementedError

    def fit(self, dataset, y=None):
        dataset = _check_dataset(dataset)
        data = EMData.from_dataset(dataset)
        options = self._options()
        if self.g_max is not None:
            self.selection_ = select_g(dataset, self.kind, self.g_max, self.criterion, options, data=data)
            self.fit_result_ = self.selection_.best
        else:
            self.selection_ = None
            self.fit_result_ = self._fit_one(dataset, data, options)
        self.dataset_ = dataset
        self.n_states_ = int(self.fit_result_.params.pi.size)
        self.converged_ = bool(self.fit_result_.converged)
        self.loglik_ = self.fit_result_.loglik
        self.feature_names_in_ = np.asarray(dataset.freq_feature_names, dtype=object)
        return self

    def _check_fitted(self):
        if not hasattr(self, "fit_result_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def predict(self, dataset=None, n_sims: int = 1000, seed=None, include_tail: bool = False) -> IbnrEstimate:
        """Simulate the IBNR count at the valuation date of ``dataset`` (default: the training data)."""
        self._check_fitted()
        dataset = self.dataset_ if dataset is None else _check_dataset(dataset)
        if list(dataset.freq_feature_names) != list(self.feature_names_in_):
            raise ValueError("dataset covariates differ from those seen in fit")
        seed = self.seed if seed is None else seed
        est = simulate_ibnr(self.fit_result_, dataset, n_sims, seed, **self._predict_kwargs())
        if include_tail:
            est.tail = tail_beyond_D(dataset.runoff)
        return est

    def _predict_kwargs(self) -> dict:
        return {"states": self.states}

    def score(self, dataset=None, y=None) -> float:
        """Observed log-likelihood of the fitted model."""
        self._check_fitted()
        return self.loglik_


class MultinomialReservingModel(_HmmReservingModel):
    """Hidden-Markov Poisson frequencies with multinomial reporting lags.

    Parameters
    ----------
    g : int
        Number of hidden states.
    g_max : int or None
        When set, ``g`` is chosen by backward selection from ``g_max``.
    criterion : {"AIC", "BIC"}
    link, link_d1 : str
        Links of the lag regressions for ``d >= 2`` and ``d = 1``.
    tol, max_iter, init_iter, seed, workers
        See :class:`~ibnrcox.em.common.FitOptions`.
    states : {"viterbi", "posterior"}
        State path used when simulating IBNR counts.
    """

    kind = "mm"

    def __init__(self, g=2, g_max=None, criterion="BIC", link="cloglog", link_d1="logit", tol=1e-4,
                 max_iter=200, init_iter=10, seed=0, workers=1, states="viterbi"):
        self.g = g
        self.g_max = g_max
        self.criterion = criterion
        self.link = link
        self.link_d1 = link_d1
        self.tol = tol
        self.max_iter = max_iter
        self.init_iter = init_iter
        self.seed = seed
        self.workers = workers
        self.states = states

    def _fit_one(self, dataset, data, options):
        return fit_mm(data, options)


class DirichletReservingModel(_HmmReservingModel):
    """Hidden-Markov Poisson frequencies with Dirichlet-multinomial reporting lags.

    Parameters
    ----------
    estep : {"exact", "mc"}
        Expectations over the reported mass by series or by rejection-sampled draws.
    mc_samples, double_after, rescale
        Monte Carlo E-step settings, see :class:`~ibnrcox.em.common.FitOptions`.
    dm_delay : {"prior", "posterior"}
        Distribution of the lag vector drawn per simulation.
    Other parameters as :class:`MultinomialReservingModel`.
    """

    kind = "dm"

    def __init__(self, g=2, g_max=None, criterion="BIC", estep="exact", mc_samples=200, double_after=None,
                 rescale=False, tol=1e-4, max_iter=200, init_iter=10, seed=0, workers=1, states="viterbi",
                 dm_delay="prior"):
        self.g = g
        self.g_max = g_max
        self.criterion = criterion
        self.estep = estep
        self.mc_samples = mc_samples
        self.double_after = double_after
        self.rescale = rescale
        self.tol = tol
        self.max_iter = max_iter
        self.init_iter = init_iter
        self.seed = seed
        self.workers = workers
        self.states = states
        self.dm_delay = dm_delay

    def _fit_one(self, dataset, data, options):
        return fit_dm(data, options)

    def _predict_kwargs(self) -> dict:
        return {"states": self.states, "dm_delay": self.dm_delay}


class ContinuousReservingModel(_HmmReservingModel):
    """Two-step model: log-logistic delay regression, then a hidden-Markov Poisson fit.

    Parameters
    ----------
    delay_mode : {"truncated", "oracle"}
        Right-truncated likelihood of reported claims, or the plain
        likelihood with late claims included (hindsight benchmark).
    day_features : tuple of {"month", "weekday"}
    Other parameters as :class:`MultinomialReservingModel`.
    """

    kind = "cm"

    def __init__(self, g=2, g_max=None, criterion="BIC", delay_mode="truncated", day_features=("month", "weekday"),
                 tol=1e-4, max_iter=200, seed=0, workers=1, states="viterbi"):
        self.g = g
        self.g_max = g_max
        self.criterion = criterion
        self.delay_mode = delay_mode
        self.day_features = day_features
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed
        self.workers = workers
        self.states = states

    def _fit_one(self, dataset, data, options):
        return fit_cm(dataset, options, delay_mode=self.delay_mode, day_features=self.day_features, data=data)


class ChainLadder(BaseEstimator):
    """Volume-weighted chain ladder on the aggregate run-off triangle."""

    def fit(self, dataset, y=None):
        dataset = _check_dataset(dataset)
        self.result_ = chain_ladder(runoff_triangle(dataset.runoff))
        self.factors_ = self.result_.factors
        self.dataset_ = dataset
        return self

    def predict(self, dataset=None, include_tail: bool = False) -> float:
        """IBNR point estimate; refits on ``dataset`` when one is given."""
        if dataset is not None:
            self.fit(dataset)
        if not hasattr(self, "result_"):
            raise NotFittedError("ChainLadder is not fitted yet")
        tail = tail_beyond_D(self.dataset_.runoff) if include_tail else 0.0
        return self.result_.ibnr + tail


MODELS = {
    "mm": MultinomialReservingModel,
    "dm": DirichletReservingModel,
    "cm": ContinuousReservingModel,
    "cl": ChainLadder,
}
