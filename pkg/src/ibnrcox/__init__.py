"""IBNR claim-count reserving with a hidden Markov claim-frequency process.

Three delay models share a Poisson hidden-Markov frequency component:
continuous log-logistic delays fitted under right truncation (``cm``),
multinomial lag probabilities (``mm``) and Dirichlet-multinomial lag
probabilities (``dm``).  A volume-weighted chain ladder (``cl``) is
included as a baseline.
"""

from .data import DataValidationError, ObservedDataset, PeriodGrid, RunOffArray, from_frames, ingest
from .em import FitOptions, FitResult, fit_cm, fit_dm, fit_mm, select_g
from .estimators import ChainLadder, ContinuousReservingModel, DirichletReservingModel, MultinomialReservingModel
from .predict import IbnrEstimate, chain_ladder, evaluate, simulate_ibnr, tail_beyond_D
from .synthetic import ScenarioConfig, generate, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "ChainLadder",
    "ContinuousReservingModel",
    "DataValidationError",
    "DirichletReservingModel",
    "FitOptions",
    "FitResult",
    "IbnrEstimate",
    "MultinomialReservingModel",
    "ObservedDataset",
    "PeriodGrid",
    "RunOffArray",
    "ScenarioConfig",
    "chain_ladder",
    "evaluate",
    "fit_cm",
    "fit_dm",
    "fit_mm",
    "from_frames",
    "generate",
    "ingest",
    "select_g",
    "simulate_dataset",
    "simulate_ibnr",
    "tail_beyond_D",
]
