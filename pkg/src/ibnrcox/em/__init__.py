"""EM fitters for the continuous, multinomial and Dirichlet-multinomial delay models."""

from .common import ConvergenceWarning, EMData, FitOptions, FitResult, aic, bic, relative_distance
from .continuous import ContinuousParams, fit_cm
from .dirichlet import DirichletParams, fit_dm
from .multinomial import MultinomialParams, fit_mm
from .selection import SelectionResult, select_g

__all__ = [
    "ContinuousParams",
    "ConvergenceWarning",
    "DirichletParams",
    "EMData",
    "FitOptions",
    "FitResult",
    "MultinomialParams",
    "SelectionResult",
    "aic",
    "bic",
    "fit_cm",
    "fit_dm",
    "fit_mm",
    "relative_distance",
    "select_g",
]
