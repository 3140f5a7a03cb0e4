"""Backward selection of the number of hidden states."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..data import ObservedDataset
from ..delay_continuous import fit_dataset_delay
from .common import EMData, FitOptions, FitResult, stationary_weights
from .continuous import fit_cm
from .dirichlet import fit_dm
from .multinomial import fit_mm


@dataclass
class SelectionResult:
    fits: dict
    criterion: str
    chosen_g: int

    @property
    def best(self) -> FitResult:
        return self.fits[self.chosen_g]

    def scores(self) -> dict:
        return {g: getattr(fit, self.criterion.lower()) for g, fit in sorted(self.fits.items())}


def drop_state(params, k: int):
    """Remove state ``k`` and renormalize ``pi`` and the rows of ``Gamma``."""
    keep = np.delete(np.arange(params.g), k)
    pi = params.pi[keep]
    pi = pi / pi.sum() if pi.sum() > 0 else np.full(keep.size, 1.0 / keep.size)
    gamma = params.gamma[np.ix_(keep, keep)]
    rows = gamma.sum(axis=1, keepdims=True)
    gamma = np.where(rows > 0, gamma / np.where(rows > 0, rows, 1.0), 1.0 / keep.size)
    return dataclasses.replace(params, pi=pi, gamma=gamma, theta=params.theta[keep])


def select_g(
    dataset: ObservedDataset,
    kind: str,
    g_max: int,
    criterion: str = "BIC",
    options: FitOptions | None = None,
    data: EMData | None = None,
) -> SelectionResult:
    """Fit ``g_max`` states, then delete the least-visited state and refit.

    The state with the smallest stationary weight is removed, the remaining
    start probabilities and transition rows are renormalized, and the
    reduced model is refitted from those values.  Deletion stops as soon
    as the information criterion no longer decreases; the chosen ``g`` is
    the one with the lowest criterion among the fitted models.
    """
    if g_max < 2:
        raise ValueError("g_max must be at least 2")
    criterion = criterion.upper()
    if criterion not in ("AIC", "BIC"):
        raise ValueError("criterion must be 'AIC' or 'BIC'")
    options = options or FitOptions()
    data = data if data is not None else EMData.from_dataset(dataset)
    delay = fit_dataset_delay(dataset) if kind == "cm" else None

    def fit(g, init):
        opts = dataclasses.replace(options, g=g)
        if kind == "mm":
            return fit_mm(data, opts, init)
        if kind == "dm":
            return fit_dm(data, opts, init)
        if kind == "cm":
            return fit_cm(dataset, opts, delay_model=delay, data=data, init=init)
        raise ValueError(f"unknown model kind {kind!r}")

    fits = {g_max: fit(g_max, None)}
    g = g_max
    while g > 1:
        prev = fits[g]
        k = int(np.argmin(stationary_weights(prev.params.gamma)))
        fits[g - 1] = fit(g - 1, drop_state(prev.params, k))
        score = lambda r: getattr(r, criterion.lower())
        if score(fits[g - 1]) >= score(prev):
            break
        g -= 1
    chosen = min(fits, key=lambda h: (getattr(fits[h], criterion.lower()), h))
    return SelectionResult(fits, criterion, chosen)
