"""Outer loop of the bilevel DC algorithm.

Each outer step solves the lower problem at the current radii, linearizes
its value function and takes one inexact proximal penalty step on
``z = (x, r)``. The penalty weight grows while the step is large relative
to the constraint violation.
"""

from dataclasses import dataclass, field
from typing import Optional
import logging
import math
import time

import numpy as np

from .lower import AdmmConfig, solve_lower
from .metrics import psnr, rlne
from .penalty import (
    OuterPoint,
    PenaltyState,
    SubproblemConfig,
    eval_energy,
    eval_eta,
    solve_subproblem,
)

logger = logging.getLogger(__name__)

__all__ = [
    "BfdcaConfig",
    "OuterRecord",
    "OuterTrace",
    "update_alpha",
    "update_rho",
    "run_bfdca",
]


@dataclass
class BfdcaConfig:
    """Outer-loop parameters.

    ``z0`` defaults to ``x = 0`` and ``r = r0``. ``delta_rho = 0`` keeps the
    proximal weight constant. ``max_time`` (seconds) stops the loop after
    the first outer step that ends past the budget.
    """

    c_alpha: float = 1.0
    c_rho: float = 1.0
    delta_alpha: float = 0.005
    delta_rho: float = 0.0
    alpha0: float = 0.0
    alpha_max: float = 10.0
    rho0: float = 1e-3
    rho_max: float = 1e-3
    tol: float = 1e-3
    max_outer: int = 500
    max_time: Optional[float] = None
    r0: tuple = (0.1, 0.5)
    z0: Optional[OuterPoint] = None
    lower: AdmmConfig = field(default_factory=lambda: AdmmConfig(max_iter=3000))
    inner: SubproblemConfig = field(default_factory=lambda: SubproblemConfig(max_iter=300))

    def __post_init__(self):
        for name in ("c_alpha", "c_rho", "rho0", "tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("delta_alpha", "delta_rho", "alpha0"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.alpha_max > self.alpha0:
            raise ValueError("alpha_max must exceed alpha0")
        if not self.rho_max >= self.rho0:
            raise ValueError("rho_max must be at least rho0")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        if self.max_time is not None and not self.max_time > 0:
            raise ValueError("max_time must be positive")
        if min(self.r0) < 0:
            raise ValueError("r0 must be nonnegative")


@dataclass
class OuterRecord:
    k: int
    z: OuterPoint
    alpha: float
    rho: float
    eta: float
    delta: float
    phi_value: float
    lower_value: float
    xi: np.ndarray
    wall_time: float
    inner_iterations: int
    residual_norm: float
    inner_converged: bool
    energy: float
    energy_prev: float
    metrics: dict = field(default_factory=dict)


@dataclass
class OuterTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    timed_out: bool = False
    z: Optional[OuterPoint] = None
    lower: object = None

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(rec, name) for rec in self.records])


def update_alpha(alpha_k, delta, eta, cfg):
    """Grow the penalty when ``max(alpha, 1/eta) < c_alpha / delta``.

    ``1/0`` is infinite, so a feasible step never grows ``alpha``; a zero
    step with positive violation always does.
    """
    if delta < 0 or eta < 0:
        raise ValueError("delta and eta must be nonnegative")
    inv_eta = math.inf if eta == 0 else 1.0 / eta
    if inv_eta == math.inf:
        return alpha_k
    bound = math.inf if delta == 0 else cfg.c_alpha / delta
    if max(alpha_k, inv_eta) < bound:
        return min(alpha_k + cfg.delta_alpha, cfg.alpha_max)
    return alpha_k


def update_rho(rho_k, delta, cfg):
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta > cfg.c_rho:
        return min(rho_k + cfg.delta_rho, cfg.rho_max)
    return rho_k


def _initial_point(dataset, cfg):
    if cfg.z0 is not None:
        if cfg.z0.x.shape != dataset.shape:
            raise ValueError("z0 does not match the data shape")
        if not cfg.z0.feasible:
            raise ValueError("z0.r must be nonnegative")
        return cfg.z0.copy()
    return OuterPoint(dataset.zeros(), np.asarray(cfg.r0, dtype=float))


def run_bfdca(dataset, cfg=None, callback=None):
    """Run the outer loop until ``max(||z^{k+1} - z^k||, eta) < tol``.

    Parameters
    ----------
    dataset : Dataset
        When ``dataset.ground_truth`` is set, RLNE and PSNR are recorded
        per outer iteration.
    cfg : BfdcaConfig, optional
    callback : callable, optional
        Called with each :class:`OuterRecord` as it is appended.

    Returns
    -------
    OuterTrace
        ``z`` is the last iterate and ``lower`` the lower solution at its
        radii. ``converged`` is False when ``max_outer`` was reached.
    """
    cfg = cfg or BfdcaConfig()
    z = _initial_point(dataset, cfg)
    alpha, rho = cfg.alpha0, cfg.rho0
    trace = OuterTrace()
    t0 = time.perf_counter()
    lower = solve_lower(dataset, z.r, cfg.lower)
    prev_step = None
    duals = None
    # E at (z^k, z^{k-1}, xi^{k-1}); needs alpha_k, so keep the pieces
    prev = None

    for k in range(cfg.max_outer):
        state = PenaltyState(dataset, z, lower, alpha, rho, prev_step)
        res = solve_subproblem(state, cfg.inner, duals)
        duals = res.duals
        z_next = res.z_next
        delta = z_next.distance(z)
        eta = eval_eta(z_next, state)

        energy = eval_energy(dataset, z_next, z, lower.xi, alpha, rho, lower.value)
        energy_prev = math.nan
        if prev is not None:
            energy_prev = eval_energy(dataset, z, prev[0], prev[1], alpha, prev[2], prev[3])

        metrics = {}
        if dataset.ground_truth is not None and np.any(z_next.x):
            metrics = {"rlne": rlne(z_next.x, dataset.ground_truth),
                       "psnr": psnr(z_next.x, dataset.ground_truth)}
        rec = OuterRecord(
            k=k + 1, z=z_next, alpha=alpha, rho=rho, eta=eta, delta=delta,
            phi_value=res.phi_value, lower_value=lower.value, xi=lower.xi.copy(),
            wall_time=time.perf_counter() - t0, inner_iterations=res.inner_iterations,
            residual_norm=res.residual_norm, inner_converged=res.converged,
            energy=energy, energy_prev=energy_prev, metrics=metrics,
        )
        trace.records.append(rec)
        if callback is not None:
            callback(rec)
        logger.debug("k=%d alpha=%.4g eta=%.3e delta=%.3e phi=%.6g", k + 1, alpha, eta, delta, res.phi_value)

        prev = (z, lower.xi.copy(), rho, lower.value)
        z = z_next
        if min(z.r) < 1e-8:
            logger.warning("radius component %.3e is close to zero at k=%d", min(z.r), k + 1)
        lower = solve_lower(dataset, z.r, cfg.lower, warm_start=lower)
        if max(delta, eta) < cfg.tol:
            trace.converged = True
            break
        if cfg.max_time is not None and time.perf_counter() - t0 > cfg.max_time:
            trace.timed_out = True
            logger.warning("outer loop stopped at k=%d by max_time=%.1fs", k + 1, cfg.max_time)
            break
        alpha = update_alpha(alpha, delta, eta, cfg)
        rho = update_rho(rho, delta, cfg)
        prev_step = delta

    if not (trace.converged or trace.timed_out):
        logger.warning("outer loop reached max_outer=%d without meeting tol=%.1e", cfg.max_outer, cfg.tol)
    trace.z = z
    trace.lower = lower
    return trace
