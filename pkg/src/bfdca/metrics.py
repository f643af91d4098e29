"""Reconstruction quality metrics and optimality diagnostics."""

from dataclasses import asdict, dataclass
import math

import numpy as np
from scipy.optimize import minimize_scalar

from .operators import diff_adjoint, diff_forward, fourier_forward, haar_adjoint, haar_forward
from .validation import check_image, check_kspace, check_mask

__all__ = [
    "MetricReport",
    "rlne",
    "psnr",
    "nre",
    "metric_report",
    "KktResidual",
    "kkt_residual",
    "RoundTrip",
    "equivalence_roundtrip",
]


def _pair(x_bar, x_star):
    x_bar = check_image(x_bar, name="x_bar")
    x_star = check_image(x_star, name="x_star")
    if x_bar.shape != x_star.shape:
        raise ValueError(f"shape mismatch: {x_bar.shape} vs {x_star.shape}")
    return x_bar, x_star


def rlne(x_bar, x_star):
    """Relative l2 error ``||x_bar - x_star|| / ||x_bar||``.

    The denominator is the reconstruction, not the reference.
    """
    x_bar, x_star = _pair(x_bar, x_star)
    den = float(np.linalg.norm(x_bar))
    if den == 0:
        raise ValueError("rlne is undefined for an all-zero reconstruction")
    return float(np.linalg.norm(x_bar - x_star)) / den


def psnr(x_bar, x_star):
    """``20 log10(sqrt(n) / ||x_bar - x_star||)`` in dB; ``inf`` on exact recovery."""
    x_bar, x_star = _pair(x_bar, x_star)
    err = float(np.linalg.norm(x_bar - x_star))
    if err == 0:
        return math.inf
    return 20.0 * math.log10(math.sqrt(x_bar.size) / err)


def nre(x_star, b, mask):
    """Data-consistency residual ``||Phi x_star - b|| / (1 + ||b||)``."""
    mask = check_mask(mask)
    x_star = check_image(x_star, name="x_star")
    b = check_kspace(b, mask)
    return float(np.linalg.norm(fourier_forward(x_star, mask) - b)) / (1.0 + float(np.linalg.norm(b)))


@dataclass(frozen=True)
class MetricReport:
    rlne: float
    psnr: float
    nre: float

    def as_dict(self):
        return asdict(self)


def metric_report(x_bar, x_star, b=None, mask=None):
    """RLNE and PSNR of ``x_bar``, plus NRE of ``x_star`` when data is given."""
    value = nre(x_star, b, mask) if b is not None else math.nan
    return MetricReport(rlne=rlne(x_bar, x_star), psnr=psnr(x_bar, x_star), nre=value)


# -- optimality diagnostics -----------------------------------------------

@dataclass(frozen=True)
class KktResidual:
    """Residuals of the bilevel KKT system at ``z`` with multipliers ``xi``.

    ``xi = (xi0, xi1, xi2)`` weighs the value-function constraint and the
    two ball constraints.
    """

    stationarity_x: float
    stationarity_r: float
    complementarity: float
    feasibility: float
    multipliers: tuple

    def max(self):
        return max(self.stationarity_x, self.stationarity_r, self.complementarity, self.feasibility)


def _support(v, zero_tol):
    scale = float(np.abs(v).max()) if v.size else 0.0
    return np.abs(v) > zero_tol * max(scale, 1e-300)


def _subgradient_distance(g, a, c, v, w, zero_tol, iters=500):
    """``min ||g + a Psi^T s + c D^T t||`` over subgradients ``s`` of ``||v||_1``
    and ``t`` of ``||w||_1``.

    Coefficients below ``zero_tol`` (relative) are free in ``[-1, 1]``; the
    others are fixed to their sign. Solved by projected FISTA.
    """
    fix_v = _support(v, zero_tol)
    fix_w = _support(w, zero_tol)
    s = np.where(fix_v, np.sign(v), 0.0)
    t = np.where(fix_w, np.sign(w), 0.0)

    def resid(s, t):
        return g + a * haar_adjoint(s) + c * diff_adjoint(t)

    if (a == 0 or fix_v.all()) and (c == 0 or fix_w.all()):
        return float(np.linalg.norm(resid(s, t)))
    lip = a * a + 8.0 * c * c
    ys, yt, sp, tp = s, t, s, t
    step = 1.0
    best = np.inf
    for _ in range(iters):
        e = resid(ys, yt)
        best = min(best, float(np.linalg.norm(e)))
        gs = a * haar_forward(e)
        gt = c * diff_forward(e)
        sn = np.where(fix_v, s, np.clip(ys - gs / lip, -1.0, 1.0))
        tn = np.where(fix_w, t, np.clip(yt - gt / lip, -1.0, 1.0))
        step_n = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * step * step))
        beta = (step - 1.0) / step_n
        ys, yt = sn + beta * (sn - sp), tn + beta * (tn - tp)
        sp, tp, step = sn, tn, step_n
    return min(best, float(np.linalg.norm(resid(sp, tp))))


def kkt_residual(z, lower, dataset, xi0_max=1e4, zero_tol=1e-6, iters=500):
    """Measure how far ``z = (x, r)`` is from a KKT point.

    The ball multipliers are tied to the lower-level ones,
    ``(xi1, xi2) = xi0 * lower.xi``, which zeroes the ``r`` stationarity
    whenever ``r > 0`` (the value function has gradient ``-lower.xi``).
    ``xi0`` is then chosen in ``[0, xi0_max]`` by bounded scalar
    minimization of ``stationarity_x + complementarity``; the ``x``
    stationarity is a distance to a subdifferential, which is convex in
    ``xi0``.

    Parameters
    ----------
    z : OuterPoint
    lower : LowerSolution
        Lower solve at ``z.r``.
    dataset : Dataset
    xi0_max : float, default 1e4
    zero_tol : float, default 1e-6
        Relative level under which transform coefficients count as zero.
    iters : int, default 500
        FISTA iterations of the subgradient distance.

    Returns
    -------
    KktResidual
    """
    x, r = z.x, np.asarray(z.r, dtype=float)
    xi_l = np.asarray(lower.xi, dtype=float)
    if np.any(xi_l < 0):
        raise ValueError("lower multipliers must be nonnegative")
    if np.any(np.abs(lower.r - r) > 1e-12 * (1.0 + np.abs(r))):
        raise ValueError("lower solution was computed at different radii")
    v, w = haar_forward(x), diff_forward(x)
    g_val, g_tr = dataset.val_gradient(x), dataset.train_gradient(x)
    theta = dataset.train_fidelity(x) - lower.value
    g1 = float(np.abs(v).sum()) - r[0]
    g2 = float(np.abs(w).sum()) - r[1]
    feas = max(0.0, theta, g1, g2)

    def parts(xi0):
        st = _subgradient_distance(g_val + xi0 * g_tr, xi0 * xi_l[0], xi0 * xi_l[1],
                                   v, w, zero_tol, iters)
        comp = max(abs(xi0 * theta), abs(xi0 * xi_l[0] * g1), abs(xi0 * xi_l[1] * g2))
        return st, comp

    at_zero = sum(parts(0.0))
    opt = minimize_scalar(lambda t: sum(parts(t)), bounds=(0.0, xi0_max), method="bounded",
                          options={"xatol": 1e-6 * (1.0 + xi0_max)})
    xi0 = 0.0 if at_zero <= opt.fun else float(opt.x)
    st, comp = parts(xi0)
    xi = (xi0, xi0 * xi_l[0], xi0 * xi_l[1])

    # r-stationarity: xi0 * lower.xi - (xi1, xi2) must lie in the normal cone at r
    gr = xi0 * xi_l - np.array(xi[1:])
    gr = np.where(r > 0, gr, np.minimum(gr, 0.0))
    return KktResidual(
        stationarity_x=st,
        stationarity_r=float(np.linalg.norm(gr)),
        complementarity=comp,
        feasibility=feas,
        multipliers=xi,
    )


@dataclass(frozen=True)
class RoundTrip:
    """Discrepancies of the penalized/constrained equivalence in both directions."""

    lam: np.ndarray
    radii: np.ndarray
    xi: np.ndarray
    penalized_to_constrained: float
    constrained_to_penalized: float
    scale: float

    def relative(self):
        return max(self.penalized_to_constrained, self.constrained_to_penalized) / self.scale


def equivalence_roundtrip(dataset, lam, cfg=None):
    """Check both directions of the penalized/constrained correspondence.

    ``x_p`` solves the penalized problem with weights ``lam``; the
    constrained problem at ``r = (||Psi x_p||_1, TV(x_p))`` must return
    ``x_p``. Conversely the constrained solution ``x_c`` at those radii,
    with multipliers ``xi``, must solve the penalized problem with ``xi``.
    """
    from .baselines import solve_penalized
    from .dataset import as_pair
    from .lower import AdmmConfig, solve_lower

    cfg = cfg or AdmmConfig(max_iter=20000, primal_tol=1e-9, dual_tol=1e-9)
    lam = as_pair(lam, "weights")
    x_p = solve_penalized(dataset, lam, cfg)
    radii = np.array([np.abs(haar_forward(x_p)).sum(), np.abs(diff_forward(x_p)).sum()])
    low = solve_lower(dataset, radii, cfg)
    x_back = solve_penalized(dataset, low.xi, cfg)
    return RoundTrip(
        lam=lam,
        radii=radii,
        xi=low.xi,
        penalized_to_constrained=float(np.linalg.norm(low.x_bar - x_p)),
        constrained_to_penalized=float(np.linalg.norm(x_back - low.x_bar)),
        scale=1.0 + float(np.linalg.norm(x_p)),
    )
