"""Multi-image train/validation/test protocol.

Every image is measured with the same mask. Its samples are split at
random into a fitting part and a held-out part; restorations use only the
fitting part and are scored by the relative error on the held-out part.
Hyperparameters are learned on the training images and scored on the
validation and test images.
"""

from dataclasses import dataclass, field, replace
import time

import numpy as np

from .baselines import (
    PenalizedObjective,
    SearchSpace,
    grid_search,
    random_search,
    solve_penalized,
    tpe_search,
)
from .dataio import add_noise, split_corpus
from .dataset import Dataset
from .driver import BfdcaConfig, run_bfdca
from .lower import AdmmConfig
from .operators import fourier_forward
from .validation import check_mask, check_random_state

__all__ = [
    "Measurement",
    "ProtocolResult",
    "holdout_split",
    "measure",
    "simulate_corpus",
    "stack",
    "heldout_error",
    "run_protocol",
]


_SEARCHES = {"gs": grid_search, "rs": random_search, "tpe": tpe_search}


@dataclass
class Measurement:
    """One image with its fitting and held-out k-space samples."""

    truth: np.ndarray
    mask_fit: np.ndarray
    b_fit: np.ndarray
    mask_ho: np.ndarray
    b_ho: np.ndarray


def holdout_split(mask, fraction, seed):
    """Move a random ``fraction`` of the sampled positions to a held-out mask.

    The DC position stays in the fitting mask.
    """
    mask = check_mask(mask)
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = check_random_state(seed)
    idx = np.flatnonzero(mask)
    idx = idx[idx != 0]
    k = int(round(fraction * mask.sum()))
    ho = np.zeros(mask.size, dtype=bool)
    ho[rng.choice(idx, size=min(k, idx.size), replace=False)] = True
    ho = ho.reshape(mask.shape)
    return mask & ~ho, ho


def simulate_corpus(images, mask, noise):
    """Noisy samples of every image; image ``i`` uses noise seed ``noise.seed + i``."""
    out = []
    for i, img in enumerate(images):
        clean = fourier_forward(img, mask)
        if noise is None:
            out.append(clean)
        else:
            spec = type(noise)(noise.kind, noise.level, noise.seed + i)
            out.append(add_noise(clean, img, mask, spec))
    return out


def measure(truth, mask, b, fraction=0.2, seed=0):
    """Split the samples ``b`` of ``truth`` into fitting and held-out parts."""
    full = np.zeros(mask.shape, dtype=complex)
    full[mask] = b
    fit, ho = holdout_split(mask, fraction, seed)
    return Measurement(truth, fit, full[fit], ho, full[ho])


def stack(items):
    """One dataset over an image stack: fitting samples train, held-out ones validate."""
    mask_fit = np.stack([m.mask_fit for m in items])
    mask_ho = np.stack([m.mask_ho for m in items])
    return Dataset(
        mask_fit, np.concatenate([m.b_fit for m in items]),
        mask_ho, np.concatenate([m.b_ho for m in items]),
        ground_truth=np.stack([m.truth for m in items]),
    )


def heldout_error(lam, items, cfg=None):
    """Mean relative held-out error of the penalized restorations with ``lam``."""
    errs = []
    for m in items:
        ds = Dataset(m.mask_fit, m.b_fit, m.mask_ho, m.b_ho)
        x = solve_penalized(ds, lam, cfg)
        errs.append(np.linalg.norm(ds.val_residual(x)) / np.linalg.norm(m.b_ho))
    return float(np.mean(errs))


class _MeanHeldout:
    """Search objective: mean relative held-out error over training images."""

    def __init__(self, items, cfg):
        self.objs = [PenalizedObjective(Dataset(m.mask_fit, m.b_fit, m.mask_ho, m.b_ho), cfg)
                     for m in items]

    def __call__(self, u):
        errs, xs = [], []
        for obj in self.objs:
            _, x = obj(u)
            ds = obj.dataset
            errs.append(np.linalg.norm(ds.val_residual(x)) / np.linalg.norm(ds.b_val))
            xs.append(x)
        return float(np.mean(errs)), np.stack(xs)


@dataclass
class ProtocolResult:
    method: str
    rows: list = field(default_factory=list)

    def summary(self):
        """Mean and standard deviation of each per-repeat column."""
        out = {}
        for key in ("time_s", "val_err", "test_err"):
            vals = np.array([row[key] for row in self.rows])
            out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out


def run_protocol(images, mask, data, counts=(10, 10, 50), method="bfdca", repeat=10, seed=0,
                 fraction=0.2, bfdca_cfg=None, space=None, admm_cfg=None):
    """Learn weights on training images and score them on the other splits.

    Parameters
    ----------
    images : list of ndarray
    mask : ndarray of bool
    data : list of ndarray
        Noisy samples of each image under ``mask``.
    counts : triple, default (10, 10, 50)
        Training, validation and test image counts.
    method : {'bfdca', 'gs', 'rs', 'tpe'}
    repeat : int, default 10
        Repeat ``i`` reshuffles the corpus and the held-out splits with
        ``seed + i``.
    bfdca_cfg : BfdcaConfig, optional
    space : SearchSpace, optional
    admm_cfg : AdmmConfig, optional
        Solver settings of every penalized restoration.

    Returns
    -------
    ProtocolResult
        One row per repeat with ``lam``, ``time_s``, ``val_err`` and
        ``test_err``.
    """
    if method not in ("bfdca",) + tuple(_SEARCHES):
        raise ValueError(f"method must be one of bfdca, gs, rs, tpe; got {method!r}")
    if len(data) != len(images):
        raise ValueError("need one data vector per image")
    admm_cfg = admm_cfg or AdmmConfig()
    result = ProtocolResult(method)
    for rep in range(repeat):
        s = seed + rep
        split = split_corpus(list(range(len(images))), counts, seed=s)

        def build(ids):
            return [measure(images[i], mask, data[i], fraction, seed=s * 100003 + i) for i in ids]

        train, val, test = build(split.train), build(split.validation), build(split.test)
        t0 = time.perf_counter()
        if method == "bfdca":
            trace = run_bfdca(stack(train), bfdca_cfg or BfdcaConfig())
            lam = np.asarray(trace.lower.xi, dtype=float).copy()
        else:
            sp = space or SearchSpace()
            sp = replace(sp, seed=s)
            trace = _SEARCHES[method](None, sp, objective=_MeanHeldout(train, admm_cfg))
            lam = trace.best.lam
        elapsed = time.perf_counter() - t0
        result.rows.append({
            "repeat": rep,
            "seed": s,
            "lam": [float(v) for v in lam],
            "time_s": elapsed,
            "val_err": heldout_error(lam, val, admm_cfg),
            "test_err": heldout_error(lam, test, admm_cfg),
        })
    return result
