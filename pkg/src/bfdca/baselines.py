"""Penalized restoration and the search baselines over its weights.

The penalized model is

    min_x 1/2 ||Phi x - b||^2 + lam1 ||Psi x||_1 + lam2 ||x||_TV

and the searches pick ``lam`` by the validation fidelity of its solution.
Searches work on ``u = log10(lam)`` inside a box ``[lo, hi]^2``.
"""

from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np
from scipy.special import ndtr

from .dataset import as_pair
from .lower import AdmmConfig, AdmmState, run_admm, soft_threshold
from .metrics import psnr, rlne
from .operators import diff_forward, fourier_adjoint, fourier_forward, haar_forward, symmetrized_mask
from .validation import check_random_state

logger = logging.getLogger(__name__)

__all__ = [
    "PenalizedSolution",
    "SearchSpace",
    "SearchTrace",
    "Trial",
    "solve_penalized",
    "penalized_objective",
    "grid_search",
    "random_search",
    "tpe_search",
]


@dataclass
class PenalizedSolution:
    x: np.ndarray
    lam: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool


def penalized_objective(dataset, x, lam):
    lam = as_pair(lam, "weights")
    return (
        dataset.train_fidelity(x)
        + lam[0] * float(np.abs(haar_forward(x)).sum())
        + lam[1] * float(np.abs(diff_forward(x)).sum())
    )


def solve_penalized(dataset, lam, cfg=None, warm_start=None, return_info=False, callback=None):
    """Minimize the penalized objective on the training data by ADMM.

    Parameters
    ----------
    dataset : Dataset
    lam : pair or Hyperparams
        Nonnegative weights ``(lam1, lam2)`` of the wavelet and TV terms.
    cfg : AdmmConfig, optional
    warm_start : AdmmState, optional
    return_info : bool, default False
        Return a :class:`PenalizedSolution` (with the ADMM state as a
        second element) instead of the bare image.
    callback : callable, optional
        ``callback(it, x)`` after every ADMM x-update.

    Returns
    -------
    x : ndarray
        The restored image, or ``(PenalizedSolution, AdmmState)``.

    Notes
    -----
    With both weights zero the problem is plain least squares and the
    minimum-norm solution is returned directly.
    """
    cfg = cfg or AdmmConfig()
    lam = as_pair(lam, "weights")
    if not lam.any():
        return _least_squares(dataset, cfg, return_info)

    def prox_v(q, sigma):
        return soft_threshold(q, lam[0] / sigma)

    def prox_w(q, sigma):
        return soft_threshold(q, lam[1] / sigma)

    state = warm_start if warm_start is not None and warm_start.x.shape == dataset.shape else None
    st, info = run_admm(dataset.mask_tr, dataset.b_tr, prox_v, prox_w, cfg, state, callback=callback)
    if not info["converged"]:
        logger.warning(
            "penalized ADMM stopped at max_iter=%d (primal %.2e, dual %.2e)",
            cfg.max_iter, info["primal_residual"], info["dual_residual"],
        )
    if not return_info:
        return st.x
    sol = PenalizedSolution(
        x=st.x,
        lam=lam,
        objective=penalized_objective(dataset, st.x, lam),
        primal_residual=info["primal_residual"],
        dual_residual=info["dual_residual"],
        iterations=info["iterations"],
        converged=info["converged"],
    )
    return sol, st


def _least_squares(dataset, cfg, return_info):
    mask, b = dataset.mask_tr, dataset.b_tr
    sym = symmetrized_mask(mask)
    g = np.fft.fft2(fourier_adjoint(b, mask), norm="ortho")
    safe = np.where(sym > 0, sym, 1.0)
    x = np.fft.ifft2(np.where(sym > 0, g / safe, 0.0), norm="ortho").real
    if not return_info:
        return x
    # an exact ADMM fixed point: splits consistent, y_u = u, other duals zero
    st = AdmmState.cold(mask, b, cfg.sigma)
    st.x, st.u = x, fourier_forward(x, mask) - b
    st.y_u = st.u.copy()
    st.v, st.w = haar_forward(x), diff_forward(x)
    sol = PenalizedSolution(x=x, lam=np.zeros(2), objective=dataset.train_fidelity(x),
                            primal_residual=0.0, dual_residual=0.0, iterations=0, converged=True)
    return sol, st


# -- hyperparameter searches ----------------------------------------------

@dataclass
class SearchSpace:
    """Box ``[lo, hi]^2`` for ``u = log10(lam)`` and the search budgets.

    ``lo == hi`` is accepted for grid and random search, where it pins
    every trial to a single point.
    """

    lo: float = -9.0
    hi: float = -3.0
    grid_points: int = 14
    budget: int = 200
    seed: int = 0
    gamma: float = 0.25
    n_startup: int = 10
    n_candidates: int = 24

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo > self.hi:
            raise ValueError(f"need finite lo <= hi, got [{self.lo}, {self.hi}]")
        if self.grid_points < 1 or self.budget < 1:
            raise ValueError("grid_points and budget must be at least 1")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_startup < 1 or self.n_candidates < 1:
            raise ValueError("n_startup and n_candidates must be at least 1")


@dataclass
class Trial:
    index: int
    lam: np.ndarray
    val_err: float
    wall_time: float
    metrics: dict = field(default_factory=dict)


@dataclass
class SearchTrace:
    """Trials in evaluation order; ``best`` minimizes the validation error."""

    method: str
    trials: list = field(default_factory=list)
    best_index: int = -1
    best_x: object = None

    @property
    def best(self):
        return self.trials[self.best_index]

    def errors(self):
        return np.array([t.val_err for t in self.trials])

    def running_min(self, key="rlne"):
        """Best-so-far curve of a recorded metric (or of ``val_err``)."""
        vals = self.errors() if key == "val_err" else np.array([t.metrics[key] for t in self.trials])
        if key == "psnr":
            return np.maximum.accumulate(vals)
        return np.minimum.accumulate(vals)


class PenalizedObjective:
    """Validation error of the penalized solution, warm-started across calls.

    Calling with ``u = log10(lam)`` returns ``(val_err, x)``.
    """

    def __init__(self, dataset, cfg=None, warm_start=True):
        self.dataset = dataset
        self.cfg = cfg or AdmmConfig()
        self.warm_start = warm_start
        self._state = None

    def __call__(self, u):
        lam = 10.0 ** np.asarray(u, dtype=float)
        sol, st = solve_penalized(self.dataset, lam, self.cfg,
                                  warm_start=self._state, return_info=True)
        if self.warm_start:
            self._state = st
        return self.dataset.val_fidelity(sol.x), sol.x


def _run(method, points, objective, dataset, t0=None, trace=None):
    trace = trace or SearchTrace(method)
    t0 = time.perf_counter() if t0 is None else t0
    truth = getattr(dataset, "ground_truth", None)
    for u in points:
        err, x = objective(u)
        metrics = {}
        if truth is not None and np.any(x):
            metrics = {"rlne": rlne(x, truth), "psnr": psnr(x, truth)}
        trial = Trial(len(trace.trials), 10.0 ** np.asarray(u, dtype=float), float(err),
                      time.perf_counter() - t0, metrics)
        trace.trials.append(trial)
        if trace.best_index < 0 or trial.val_err < trace.best.val_err:
            trace.best_index, trace.best_x = trial.index, x
    return trace


def _objective(dataset, objective, cfg):
    return objective if objective is not None else PenalizedObjective(dataset, cfg)


def grid_search(dataset, space, cfg=None, objective=None):
    """Evaluate every pair of a uniform ``grid_points x grid_points`` grid in ``u``."""
    axis = np.linspace(space.lo, space.hi, space.grid_points)
    points = [np.array([a, b]) for a in axis for b in axis]
    return _run("gs", points, _objective(dataset, objective, cfg), dataset)


def random_search(dataset, space, cfg=None, objective=None):
    """Evaluate ``budget`` pairs drawn uniformly from the box."""
    rng = check_random_state(space.seed)
    points = rng.uniform(space.lo, space.hi, size=(space.budget, 2))
    return _run("rs", points, _objective(dataset, objective, cfg), dataset)


class _Parzen:
    """1-D Gaussian mixture truncated to ``[lo, hi]`` with a flat prior component.

    Each observation gets a kernel whose width is the larger gap to its
    sorted neighbours (the box ends count as neighbours).
    """

    def __init__(self, obs, lo, hi):
        width = hi - lo
        mu = np.append(np.asarray(obs, dtype=float), 0.5 * (lo + hi))
        order = np.argsort(mu[:-1])
        srt = mu[:-1][order]
        padded = np.concatenate([[lo], srt, [hi]])
        gaps = np.maximum(padded[1:-1] - padded[:-2], padded[2:] - padded[1:-1])
        sig = np.empty(mu.size)
        sig[order] = gaps
        sig[-1] = width
        self.mu = mu
        self.sigma = np.clip(sig, width / min(100.0, 1.0 + mu.size), width)
        self.lo, self.hi = lo, hi
        self.mass = ndtr((hi - mu) / self.sigma) - ndtr((lo - mu) / self.sigma)
        self.weights = np.full(mu.size, 1.0 / mu.size)

    def sample(self, rng, size):
        comp = rng.choice(self.mu.size, size=size, p=self.weights)
        out = np.empty(size)
        for i, c in enumerate(comp):
            while True:
                v = rng.normal(self.mu[c], self.sigma[c])
                if self.lo <= v <= self.hi:
                    out[i] = v
                    break
        return out

    def logpdf(self, v):
        z = (np.asarray(v)[:, None] - self.mu) / self.sigma
        dens = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigma * self.mass)
        return np.log(dens @ self.weights + 1e-300)


def tpe_search(dataset, space, cfg=None, objective=None):
    """Tree-structured Parzen estimator over the two log-weights.

    After ``n_startup`` uniform trials, the history is split at the
    ``gamma`` quantile of the errors; ``n_candidates`` draws from the good
    density ``l`` are ranked by ``log l - log g`` and the best is evaluated.
    """
    if space.budget < space.n_startup:
        raise ValueError(f"budget {space.budget} is below n_startup {space.n_startup}")
    if not space.lo < space.hi:
        raise ValueError("tpe_search needs lo < hi")
    rng = check_random_state(space.seed)
    obj = _objective(dataset, objective, cfg)
    t0 = time.perf_counter()
    # the start-up draws match random_search with the same seed
    start = rng.uniform(space.lo, space.hi, size=(space.budget, 2))[: space.n_startup]
    trace = _run("tpe", start, obj, dataset, t0)
    history = [np.log10(t.lam) for t in trace.trials]
    while len(trace.trials) < space.budget:
        errs = trace.errors()
        n_good = max(1, int(math.ceil(space.gamma * len(errs))))
        order = np.argsort(errs, kind="stable")
        good = np.array([history[i] for i in order[:n_good]])
        bad = np.array([history[i] for i in order[n_good:]])
        cand = np.empty((space.n_candidates, 2))
        score = np.zeros(space.n_candidates)
        for d in range(2):
            l = _Parzen(good[:, d], space.lo, space.hi)
            g = _Parzen(bad[:, d] if bad.size else [], space.lo, space.hi)
            cand[:, d] = l.sample(rng, space.n_candidates)
            score += l.logpdf(cand[:, d]) - g.logpdf(cand[:, d])
        u = cand[int(np.argmax(score))]
        _run("tpe", [u], obj, dataset, t0, trace)
        history.append(u)
    return trace
