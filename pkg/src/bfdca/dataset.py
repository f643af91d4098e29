"""Training/validation measurement container and hyperparameter pair."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .operators import fourier_adjoint, fourier_forward
from .validation import check_image, check_kspace, check_mask, check_pair


@dataclass(frozen=True)
class Hyperparams:
    """Either radii ``r = (r1, r2)`` or penalty weights ``lam = (lam1, lam2)``."""

    kind: str
    values: tuple

    def __post_init__(self):
        if self.kind not in ("radii", "weights"):
            raise ValueError(f"kind must be 'radii' or 'weights', got {self.kind!r}")
        object.__setattr__(self, "values", tuple(check_pair(self.values, self.kind)))

    @classmethod
    def radii(cls, r1, r2):
        return cls("radii", (r1, r2))

    @classmethod
    def weights(cls, lam1, lam2):
        return cls("weights", (lam1, lam2))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def as_pair(hp, kind):
    """Accept a :class:`Hyperparams` of the right kind or a plain pair."""
    if isinstance(hp, Hyperparams):
        if hp.kind != kind:
            raise ValueError(f"expected {kind} hyperparameters, got {hp.kind}")
        return np.array(hp.values)
    return check_pair(hp, kind)


@dataclass
class Dataset:
    """k-space measurements split into a training and a validation part.

    ``mask_tr``/``mask_val`` share the image shape, which may be a stack
    ``(B, H, W)``. The validation part may alias the training part.
    """

    mask_tr: np.ndarray
    b_tr: np.ndarray
    mask_val: np.ndarray
    b_val: np.ndarray
    ground_truth: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mask_tr = check_mask(self.mask_tr, name="mask_tr")
        self.mask_val = check_mask(self.mask_val, shape=self.mask_tr.shape, name="mask_val")
        self.b_tr = check_kspace(self.b_tr, self.mask_tr, name="b_tr")
        self.b_val = check_kspace(self.b_val, self.mask_val, name="b_val")
        if self.ground_truth is not None:
            self.ground_truth = check_image(self.ground_truth, name="ground_truth")
            if self.ground_truth.shape != self.shape:
                raise ValueError("ground_truth shape does not match the masks")

    @classmethod
    def single(cls, mask, b, ground_truth=None, **meta):
        """Dataset whose validation data is the training data itself."""
        mask = check_mask(mask)
        b = check_kspace(b, mask)
        return cls(mask, b, mask, b, ground_truth, dict(meta))

    @property
    def shape(self):
        return self.mask_tr.shape

    def zeros(self):
        return np.zeros(self.shape)

    def train_residual(self, x):
        return fourier_forward(x, self.mask_tr) - self.b_tr

    def val_residual(self, x):
        return fourier_forward(x, self.mask_val) - self.b_val

    def train_fidelity(self, x):
        return 0.5 * float(np.sum(np.abs(self.train_residual(x)) ** 2))

    def val_fidelity(self, x):
        return 0.5 * float(np.sum(np.abs(self.val_residual(x)) ** 2))

    def train_gradient(self, x):
        return fourier_adjoint(self.train_residual(x), self.mask_tr)

    def val_gradient(self, x):
        return fourier_adjoint(self.val_residual(x), self.mask_val)
