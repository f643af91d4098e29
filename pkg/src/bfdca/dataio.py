"""Images, phantoms, k-space masks, noise and corpus splits.

Every random generator here is a pure function of its arguments and an
integer seed, so repeated calls return bitwise identical arrays.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .validation import check_image, check_mask, check_random_state

__all__ = [
    "NoiseSpec",
    "CorpusSplit",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "make_shepp_logan",
    "make_random_phantom",
    "make_radial_mask",
    "add_noise",
    "split_corpus",
    "simulate",
]

MAX_SIDE = 8192

# (intensity, semi-axis a, semi-axis b, centre x, centre y, angle in degrees)
# with the higher-contrast intensities commonly used for display.
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)

NOISE_KINDS = ("salt_pepper", "uniform_random", "gaussian")


# -- image files ----------------------------------------------------------

def load_image(path):
    """Read an 8-bit grayscale PGM (P5) or PNG file as floats in [0, 1]."""
    path = Path(path)
    with PILImage.open(path) as im:
        if im.format not in ("PPM", "PNG"):
            raise ValueError(f"{path}: unsupported format {im.format}")
        if im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
        if max(im.size) > MAX_SIDE:
            raise ValueError(f"{path}: image side exceeds {MAX_SIDE}")
        data = np.asarray(im, dtype=np.uint8)
    return data.astype(float) / 255.0


def _to_uint8(img):
    img = check_image(img, allow_stack=False)
    if max(img.shape) > MAX_SIDE:
        raise ValueError(f"image side exceeds {MAX_SIDE}")
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def save_image(img, path):
    """Write ``img`` (values in [0, 1]) as 8-bit grayscale.

    The format follows the suffix: ``.pgm`` gives binary PGM, ``.png`` PNG.
    """
    path = Path(path)
    fmt = {".pgm": "PPM", ".png": "PNG"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"{path}: suffix must be .pgm or .png")
    PILImage.fromarray(_to_uint8(img), mode="L").save(path, format=fmt)


def save_mask(mask, path):
    """Store a mask as a PGM/PNG image with 255 marking sampled positions."""
    mask = check_mask(mask)
    save_image(mask.astype(float), path)


def load_mask(path):
    return load_image(path) > 0.5


# -- synthetic images -----------------------------------------------------

def _pixel_grid(size):
    # pixel midpoints in [-1, 1]; row 0 is the top of the image
    t = -1.0 + (2.0 * np.arange(size) + 1.0) / size
    return np.meshgrid(t, -t)


def _rasterize(ellipses, size):
    xx, yy = _pixel_grid(size)
    img = np.zeros((size, size))
    for value, a, b, x0, y0, angle in ellipses:
        phi = np.deg2rad(angle)
        dx, dy = xx - x0, yy - y0
        xr = dx * np.cos(phi) + dy * np.sin(phi)
        yr = -dx * np.sin(phi) + dy * np.cos(phi)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return np.clip(img, 0.0, 1.0)


def _check_size(size):
    if not isinstance(size, (int, np.integer)) or size < 8 or size & (size - 1):
        raise ValueError(f"size must be a power of two >= 8, got {size!r}")
    return int(size)


def make_shepp_logan(size=64):
    """Ten-ellipse Shepp-Logan head phantom sampled at pixel midpoints."""
    return _rasterize(SHEPP_LOGAN_ELLIPSES, _check_size(size))


def make_random_phantom(size, seed=None, n_ellipses=8):
    """Piecewise-constant image made of a head ellipse and random inclusions.

    Used as a stand-in corpus when no local image collection is supplied.
    """
    size = _check_size(size)
    rng = check_random_state(seed)
    outer_a, outer_b = rng.uniform(0.6, 0.9, size=2)
    ellipses = [(rng.uniform(0.6, 1.0), outer_a, outer_b, 0.0, 0.0, rng.uniform(-20, 20))]
    for _ in range(n_ellipses):
        a, b = rng.uniform(0.05, 0.35, size=2)
        r = rng.uniform(0.0, 0.5)
        t = rng.uniform(0, 2 * np.pi)
        ellipses.append((rng.uniform(-0.4, 0.4), a, b, r * outer_a * np.cos(t),
                         r * outer_b * np.sin(t), rng.uniform(0, 180)))
    return _rasterize(ellipses, size)


# -- sampling masks -------------------------------------------------------

def _bresenham(y0, x0, y1, x1):
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    points = []
    while True:
        points.append((y0, x0))
        if x0 == x1 and y0 == y1:
            return points
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def default_line_count(height, width, rate):
    return max(8, int(round(rate * min(height, width) / 2)))


def make_radial_mask(height, width, rate, lines=None, seed=0):
    """Pseudo-radial k-space mask with exactly ``round(rate * n)`` samples.

    Rays at random angles start at the spectrum centre and are rasterized
    to the border; random single frequencies are then added, or random ray
    points removed, to hit the target count. The DC bin is always kept.
    The mask is returned in unshifted FFT order (DC at ``[0, 0]``).
    """
    if not 0 < rate <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    n = height * width
    target = max(1, int(round(rate * n)))
    if lines is None:
        lines = default_line_count(height, width, rate)
    rng = check_random_state(seed)

    centered = np.zeros((height, width), dtype=bool)
    cy, cx = height // 2, width // 2
    radius = np.hypot(height, width)
    for angle in rng.uniform(0.0, 2.0 * np.pi, size=int(lines)):
        ey = cy + radius * np.sin(angle)
        ex = cx + radius * np.cos(angle)
        # clip the far end of the ray to the image border
        scale = 1.0
        if ey < 0 or ey > height - 1:
            scale = min(scale, ((0 if ey < 0 else height - 1) - cy) / (ey - cy))
        if ex < 0 or ex > width - 1:
            scale = min(scale, ((0 if ex < 0 else width - 1) - cx) / (ex - cx))
        y1 = int(round(cy + scale * (ey - cy)))
        x1 = int(round(cx + scale * (ex - cx)))
        for y, x in _bresenham(cy, cx, y1, x1):
            centered[y, x] = True
    centered[cy, cx] = True

    flat = centered.ravel()
    dc = cy * width + cx
    count = int(flat.sum())
    if count < target:
        free = np.flatnonzero(~flat)
        flat[rng.choice(free, size=target - count, replace=False)] = True
    elif count > target:
        taken = np.flatnonzero(flat)
        taken = taken[taken != dc]
        flat[rng.choice(taken, size=count - target, replace=False)] = False
    return np.fft.ifftshift(flat.reshape(height, width))


# -- noise ----------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    """Measurement noise model.

    ``level`` is the corrupted fraction for ``salt_pepper``, the scale of
    the uniform draw for ``uniform_random`` and the relative standard
    deviation for ``gaussian``.
    """

    kind: str = "salt_pepper"
    level: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if not np.isfinite(self.level) or self.level < 0:
            raise ValueError(f"noise level must be nonnegative, got {self.level}")
        if self.kind == "salt_pepper" and self.level > 1:
            raise ValueError("salt_pepper level is a fraction in [0, 1]")


def add_noise(clean, x_star, mask, spec):
    """Corrupt clean k-space samples ``clean = Phi x_star``.

    The extreme values used by the impulsive models are the minimum and
    maximum of the real and of the imaginary parts of ``clean``, treated
    independently.
    """
    from .operators import fourier_forward

    clean = np.asarray(clean, dtype=complex)
    expected = fourier_forward(x_star, mask)
    if clean.shape != expected.shape:
        raise ValueError("clean data does not match the mask")
    if not np.allclose(clean, expected, rtol=1e-8, atol=1e-8):
        raise ValueError("clean data is not the forward transform of x_star")
    rng = check_random_state(spec.seed)
    m = clean.size
    re, im = clean.real.copy(), clean.imag.copy()
    lo = np.array([re.min(), im.min()])
    hi = np.array([re.max(), im.max()])

    if spec.kind == "salt_pepper":
        k = int(round(spec.level * m))
        idx = rng.choice(m, size=k, replace=False)
        pick = rng.integers(0, 2, size=(2, k)).astype(bool)
        re[idx] = np.where(pick[0], hi[0], lo[0])
        im[idx] = np.where(pick[1], hi[1], lo[1])
    elif spec.kind == "uniform_random":
        re = re + spec.level * rng.uniform(lo[0], hi[0], size=m)
        im = im + spec.level * rng.uniform(lo[1], hi[1], size=m)
    else:
        std = spec.level * float(np.abs(clean).max())
        noise = rng.standard_normal((2, m)) * (std / np.sqrt(2.0))
        re = re + noise[0]
        im = im + noise[1]
    return re + 1j * im


# -- corpus ---------------------------------------------------------------

@dataclass(frozen=True)
class CorpusSplit:
    train: list
    validation: list
    test: list
    seed: int


def split_corpus(images, counts, seed=0):
    """Shuffle ``images`` with ``seed`` and cut consecutive train/val/test blocks."""
    n_tr, n_val, n_ts = (int(c) for c in counts)
    if min(n_tr, n_val, n_ts) < 0:
        raise ValueError("counts must be nonnegative")
    total = n_tr + n_val + n_ts
    if total > len(images):
        raise ValueError(f"need {total} images, got {len(images)}")
    order = check_random_state(seed).permutation(len(images))
    picked = [images[i] for i in order[:total]]
    return CorpusSplit(
        train=picked[:n_tr],
        validation=picked[n_tr:n_tr + n_val],
        test=picked[n_tr + n_val:],
        seed=seed,
    )


def simulate(x_star, mask, noise=None):
    """Single-image dataset ``b = Phi x_star + noise`` with validation = training."""
    from .dataset import Dataset
    from .operators import fourier_forward

    x_star = check_image(x_star, allow_stack=False)
    mask = check_mask(mask, shape=x_star.shape)
    clean = fourier_forward(x_star, mask)
    b = clean if noise is None else add_noise(clean, x_star, mask, noise)
    return Dataset.single(mask, b, ground_truth=x_star,
                          noise=None if noise is None else noise.kind)
