"""Estimator wrappers with the scikit-learn parameter protocol.

``fit`` takes a :class:`~bfdca.dataset.Dataset` (or a ``(mask, b)`` pair,
used for both training and validation) and learns penalty weights.
``predict`` restores images from new measurements with those weights.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import SearchSpace, grid_search, random_search, solve_penalized, tpe_search
from .dataset import Dataset
from .driver import BfdcaConfig, run_bfdca
from .lower import AdmmConfig
from .penalty import SubproblemConfig

__all__ = ["as_dataset", "PenalizedRestorer", "SearchRestorer", "BFDCARestorer"]


def as_dataset(X):
    if isinstance(X, Dataset):
        return X
    try:
        mask, b = X
    except (TypeError, ValueError):
        raise TypeError("expected a Dataset or a (mask, b) pair") from None
    return Dataset.single(mask, b)


class _RestorerMixin:
    """``predict`` and ``score`` shared by the restorers below."""

    def _admm(self):
        return AdmmConfig(max_iter=self.admm_iter)

    def predict(self, X):
        """Restore the image measured in ``X`` with the fitted weights."""
        check_is_fitted(self, "lam_")
        return solve_penalized(as_dataset(X), self.lam_, self._admm())

    def score(self, X, y=None):
        """Negative validation fidelity of the restoration of ``X``."""
        ds = as_dataset(X)
        return -ds.val_fidelity(self.predict(ds))


class PenalizedRestorer(_RestorerMixin, BaseEstimator):
    """Fixed-weight restoration ``1/2||Phi x - b||^2 + lam1 ||Psi x||_1 + lam2 TV(x)``.

    Parameters
    ----------
    lam1, lam2 : float, default 1e-3
    admm_iter : int, default 2000
    """

    def __init__(self, lam1=1e-3, lam2=1e-3, admm_iter=2000):
        self.lam1 = lam1
        self.lam2 = lam2
        self.admm_iter = admm_iter

    def fit(self, X, y=None):
        ds = as_dataset(X)
        self.lam_ = np.array([self.lam1, self.lam2], dtype=float)
        self.x_ = solve_penalized(ds, self.lam_, self._admm())
        return self


class SearchRestorer(_RestorerMixin, BaseEstimator):
    """Weights picked by grid, random or TPE search on the validation error.

    Parameters
    ----------
    method : {'gs', 'rs', 'tpe'}, default 'rs'
    lo, hi : float, default -9, -3
        Search box of ``log10(lam)``.
    grid_points : int, default 14
    budget : int, default 200
    admm_iter : int, default 2000
    random_state : int, default 0

    Attributes
    ----------
    lam_ : ndarray of shape (2,)
    x_ : ndarray
        Restoration of the training data at ``lam_``.
    trace_ : SearchTrace
    """

    _methods = {"gs": grid_search, "rs": random_search, "tpe": tpe_search}

    def __init__(self, method="rs", lo=-9.0, hi=-3.0, grid_points=14, budget=200,
                 admm_iter=2000, random_state=0):
        self.method = method
        self.lo = lo
        self.hi = hi
        self.grid_points = grid_points
        self.budget = budget
        self.admm_iter = admm_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.method not in self._methods:
            raise ValueError(f"method must be one of {sorted(self._methods)}, got {self.method!r}")
        ds = as_dataset(X)
        space = SearchSpace(self.lo, self.hi, self.grid_points, self.budget, self.random_state)
        self.trace_ = self._methods[self.method](ds, space, self._admm())
        self.lam_ = self.trace_.best.lam
        self.x_ = self.trace_.best_x
        return self


class BFDCARestorer(_RestorerMixin, BaseEstimator):
    """Bilevel restoration with radii learned by the DC penalty method.

    The fitted weights are the lower-level multipliers at the final radii,
    which makes the penalized problem equivalent to the constrained one.

    Parameters
    ----------
    c_alpha : float, default 1.0
    delta_alpha : float, default 0.005
    alpha_max : float, default 10.0
    rho : float, default 1e-3
    tol : float, default 1e-3
    max_outer : int, default 500
    r0 : pair, default (0.1, 0.5)
    inner_iter : int, default 100
    admm_iter : int, default 2000

    Attributes
    ----------
    x_ : ndarray
        Final upper-level image.
    r_ : ndarray of shape (2,)
    lam_ : ndarray of shape (2,)
    trace_ : OuterTrace
    n_iter_ : int
    """

    def __init__(self, c_alpha=1.0, delta_alpha=0.005, alpha_max=10.0, rho=1e-3, tol=1e-3,
                 max_outer=500, r0=(0.1, 0.5), inner_iter=100, admm_iter=2000):
        self.c_alpha = c_alpha
        self.delta_alpha = delta_alpha
        self.alpha_max = alpha_max
        self.rho = rho
        self.tol = tol
        self.max_outer = max_outer
        self.r0 = r0
        self.inner_iter = inner_iter
        self.admm_iter = admm_iter

    def _config(self):
        return BfdcaConfig(
            c_alpha=self.c_alpha, delta_alpha=self.delta_alpha, alpha_max=self.alpha_max,
            rho0=self.rho, rho_max=self.rho, tol=self.tol, max_outer=self.max_outer,
            r0=tuple(self.r0), lower=self._admm(), inner=SubproblemConfig(max_iter=self.inner_iter),
        )

    def fit(self, X, y=None):
        ds = as_dataset(X)
        self.trace_ = run_bfdca(ds, self._config())
        self.x_ = self.trace_.z.x
        self.r_ = self.trace_.z.r.copy()
        self.lam_ = np.asarray(self.trace_.lower.xi, dtype=float).copy()
        self.n_iter_ = len(self.trace_)
        return self
