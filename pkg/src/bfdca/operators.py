"""Linear operators of the restoration model.

Images are real arrays of shape ``(H, W)``; a stack of independent images
has shape ``(B, H, W)`` and every operator acts on the last two axes.
Sampling masks are boolean arrays of the same shape as the image they
sample, and k-space data is the complex 1-D vector ``F(x)[mask]`` in
row-major order of the selected positions.

All transforms use the unitary DFT (``norm="ortho"``) and periodic
boundary conditions, so the normal operator of every x-update is diagonal
in the Fourier basis.
"""

import numpy as np

__all__ = [
    "fourier_forward",
    "fourier_adjoint",
    "haar_forward",
    "haar_adjoint",
    "diff_forward",
    "diff_adjoint",
    "tv_norm",
    "wavelet_l1",
    "symmetrized_mask",
    "laplacian_symbol",
    "normal_symbol",
    "solve_normal_system",
]


def _check_mask(x, mask):
    mask = np.asarray(mask)
    if mask.dtype != bool:
        raise TypeError("mask must be a boolean array")
    if mask.shape != x.shape[-mask.ndim:] or mask.ndim > x.ndim:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {x.shape}")
    return np.broadcast_to(mask, x.shape)


def fourier_forward(x, mask):
    """Partial unitary Fourier transform ``(P F) x``.

    Parameters
    ----------
    x : ndarray, shape (..., H, W)
        Real image or image stack.
    mask : ndarray of bool
        Sampled k-space positions, same trailing shape as ``x``.

    Returns
    -------
    ndarray of complex, shape (m,)
        Selected Fourier coefficients in row-major order.
    """
    x = np.asarray(x, dtype=float)
    mask = _check_mask(x, mask)
    return np.fft.fft2(x, norm="ortho")[mask]


def fourier_adjoint(y, mask):
    """Adjoint of :func:`fourier_forward` on real images: ``Re(F^H P^T y)``."""
    mask = np.asarray(mask)
    if mask.dtype != bool:
        raise TypeError("mask must be a boolean array")
    y = np.asarray(y)
    if y.shape != (int(mask.sum()),):
        raise ValueError(f"expected {int(mask.sum())} samples, got shape {y.shape}")
    full = np.zeros(mask.shape, dtype=complex)
    full[mask] = y
    return np.fft.ifft2(full, norm="ortho").real


def _check_dyadic(shape):
    h, w = shape[-2:]
    for size in (h, w):
        if size < 1 or size & (size - 1):
            raise ValueError(f"Haar transform needs power-of-two sides, got {h}x{w}")
    return int(np.log2(min(h, w)))


def haar_forward(x):
    """Full-depth orthonormal 2-D Haar analysis.

    Coefficients are stored in the usual pyramid layout: after the last
    level the approximation coefficient sits in the top-left corner.
    """
    x = np.asarray(x, dtype=float)
    levels = _check_dyadic(x.shape)
    c = x.copy()
    h, w = x.shape[-2:]
    s = 1.0 / np.sqrt(2.0)
    for _ in range(levels):
        block = c[..., :h, :w]
        lo = (block[..., 0::2] + block[..., 1::2]) * s
        hi = (block[..., 0::2] - block[..., 1::2]) * s
        block = np.concatenate([lo, hi], axis=-1)
        lo = (block[..., 0::2, :] + block[..., 1::2, :]) * s
        hi = (block[..., 0::2, :] - block[..., 1::2, :]) * s
        c[..., :h, :w] = np.concatenate([lo, hi], axis=-2)
        h //= 2
        w //= 2
    return c


def haar_adjoint(c):
    """Inverse (= adjoint) of :func:`haar_forward`."""
    c = np.asarray(c, dtype=float)
    levels = _check_dyadic(c.shape)
    x = c.copy()
    H, W = c.shape[-2:]
    s = 1.0 / np.sqrt(2.0)
    for level in reversed(range(levels)):
        h, w = H >> level, W >> level
        block = x[..., :h, :w]
        lo, hi = block[..., : h // 2, :], block[..., h // 2 :, :]
        rows = np.empty_like(block)
        rows[..., 0::2, :] = (lo + hi) * s
        rows[..., 1::2, :] = (lo - hi) * s
        lo, hi = rows[..., : w // 2], rows[..., w // 2 :]
        out = np.empty_like(block)
        out[..., 0::2] = (lo + hi) * s
        out[..., 1::2] = (lo - hi) * s
        x[..., :h, :w] = out
    return x


def diff_forward(x):
    """Periodic forward differences.

    Returns an array of shape ``(2, ...)``: ``g[0]`` is the horizontal
    difference ``x[i, j+1] - x[i, j]`` and ``g[1]`` the vertical one.
    """
    x = np.asarray(x, dtype=float)
    return np.stack([np.roll(x, -1, axis=-1) - x, np.roll(x, -1, axis=-2) - x])


def diff_adjoint(g):
    """Adjoint of :func:`diff_forward` (negative periodic divergence)."""
    g = np.asarray(g, dtype=float)
    gx, gy = g[0], g[1]
    return (np.roll(gx, 1, axis=-1) - gx) + (np.roll(gy, 1, axis=-2) - gy)


def tv_norm(x):
    """Anisotropic total variation ``sum |dx| + |dy|`` (periodic)."""
    return float(np.abs(diff_forward(x)).sum())


def wavelet_l1(x):
    """``||Psi x||_1`` for the full-depth Haar transform."""
    return float(np.abs(haar_forward(x)).sum())


def symmetrized_mask(mask):
    """Fourier symbol of ``Phi^H Phi`` acting on real images.

    Taking the real part in the adjoint couples frequency ``k`` with
    ``-k``, so the symbol is ``(M(k) + M(-k)) / 2``. It equals the mask
    itself only when the mask is conjugate-symmetric.
    """
    m = np.asarray(mask, dtype=float)
    reflected = np.roll(np.flip(m, axis=(-2, -1)), 1, axis=(-2, -1))
    return 0.5 * (m + reflected)


def laplacian_symbol(shape):
    """Fourier symbol of ``D^T D`` for periodic differences."""
    h, w = shape[-2:]
    ky = 4.0 * np.sin(np.pi * np.arange(h) / h) ** 2
    kx = 4.0 * np.sin(np.pi * np.arange(w) / w) ** 2
    return ky[:, None] + kx[None, :]


def normal_symbol(mask, a, c):
    """Fourier symbol of ``Phi^H Phi + a I + c D^T D``.

    Raises
    ------
    ValueError
        If the system is numerically singular: some frequency has a symbol
        at or below machine epsilon times the largest one.
    """
    if a < 0 or c < 0:
        raise ValueError("weights must be nonnegative")
    mask = np.asarray(mask)
    symbol = symmetrized_mask(mask) + a + c * laplacian_symbol(mask.shape)
    if np.any(symbol <= np.finfo(float).eps * symbol.max()):
        raise ValueError("normal system is singular for the given weights and mask")
    return symbol


def solve_normal_system(rhs, a, c, mask, symbol=None):
    """Solve ``(Phi^H Phi + a I + c D^T D) x = rhs`` exactly.

    All three operators are diagonalized by the unitary 2-D DFT under
    periodic boundary conditions. ``symbol`` may carry a precomputed
    :func:`normal_symbol` to skip its construction inside loops.
    """
    rhs = np.asarray(rhs, dtype=float)
    if symbol is None:
        mask = _check_mask(rhs, mask)
        symbol = normal_symbol(mask, a, c)
    return np.fft.ifft2(np.fft.fft2(rhs, norm="ortho") / symbol, norm="ortho").real
