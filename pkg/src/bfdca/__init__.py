"""Bilevel hyperparameter learning for compressed-sensing image restoration.

The regularization radii of a wavelet/TV constrained restoration are learned
by a DC penalty method on the value-function reformulation; grid, random
and TPE searches over the equivalent penalty weights serve as baselines.
"""

from .baselines import SearchSpace, grid_search, random_search, solve_penalized, tpe_search
from .dataset import Dataset, Hyperparams
from .driver import BfdcaConfig, run_bfdca
from .estimators import BFDCARestorer, PenalizedRestorer, SearchRestorer
from .lower import AdmmConfig, solve_lower
from .metrics import kkt_residual, psnr, rlne

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "BFDCARestorer",
    "BfdcaConfig",
    "Dataset",
    "Hyperparams",
    "PenalizedRestorer",
    "SearchRestorer",
    "SearchSpace",
    "grid_search",
    "kkt_residual",
    "psnr",
    "random_search",
    "rlne",
    "run_bfdca",
    "solve_lower",
    "solve_penalized",
    "tpe_search",
]
