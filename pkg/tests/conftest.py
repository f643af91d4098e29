import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bfdca.dataset import Dataset
from bfdca.operators import fourier_forward

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


def random_instance(seed, size=8, rate=0.6, noise=0.05):
    """Random image, mask and noisy data; the DC bin is always sampled."""
    rng = np.random.default_rng(seed)
    x = rng.random((size, size))
    mask = rng.random((size, size)) < rate
    mask[0, 0] = True
    b = fourier_forward(x, mask)
    b = b + noise * (rng.standard_normal(b.shape) + 1j * rng.standard_normal(b.shape))
    return x, mask, b


@pytest.fixture
def small_dataset():
    x, mask, b = random_instance(0)
    return Dataset.single(mask, b, ground_truth=x)


@pytest.fixture
def full_mask_dataset():
    rng = np.random.default_rng(1)
    x = rng.random((8, 8))
    mask = np.ones((8, 8), dtype=bool)
    return Dataset.single(mask, fourier_forward(x, mask), ground_truth=x)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
