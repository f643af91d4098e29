"""Input validation helpers shared by the solvers and estimators."""

import numbers

import numpy as np


def check_image(x, name="image", allow_stack=True):
    """Return ``x`` as a finite float array of shape (H, W) or (B, H, W)."""
    x = np.asarray(x, dtype=float)
    ndims = (2, 3) if allow_stack else (2,)
    if x.ndim not in ndims:
        raise ValueError(f"{name} must have {' or '.join(map(str, ndims))} dimensions, got {x.ndim}")
    if x.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_mask(mask, shape=None, name="mask"):
    """Return a boolean mask with at least one sampled position."""
    mask = np.asarray(mask)
    if mask.dtype != bool:
        raise TypeError(f"{name} must be boolean, got {mask.dtype}")
    if shape is not None and mask.shape != tuple(shape):
        raise ValueError(f"{name} shape {mask.shape} does not match {tuple(shape)}")
    if not mask.any():
        raise ValueError(f"{name} selects no k-space positions")
    return mask


def check_kspace(b, mask, name="data"):
    b = np.asarray(b, dtype=complex)
    if b.shape != (int(mask.sum()),):
        raise ValueError(f"{name} has shape {b.shape}, mask selects {int(mask.sum())} samples")
    if not np.all(np.isfinite(b)):
        raise ValueError(f"{name} contains non-finite values")
    return b


def check_pair(values, name="hyperparameters"):
    """Validate a nonnegative pair such as radii ``r`` or weights ``lam``."""
    try:
        a, b = (float(v) for v in values)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a pair of numbers, got {values!r}") from None
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError(f"{name} must be finite, got {values!r}")
    if a < 0 or b < 0:
        raise ValueError(f"{name} must be nonnegative, got {values!r}")
    return np.array([a, b])


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if value < 0 or (strict and value == 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'nonnegative'}, got {value!r}")
    return float(value)


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (numbers.Integral, np.integer)):
        return np.random.default_rng(seed)
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")
