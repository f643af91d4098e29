import numpy as np
import pytest
from hypothesis import given, strategies as st

from bfdca.operators import (
    diff_adjoint,
    diff_forward,
    fourier_adjoint,
    fourier_forward,
    haar_adjoint,
    haar_forward,
    normal_symbol,
    solve_normal_system,
    tv_norm,
    wavelet_l1,
)

sizes = st.sampled_from([(1, 1), (2, 2), (4, 4), (8, 8), (4, 16), (16, 8)])
seeds = st.integers(0, 2**31 - 1)


def _inner(a, b):
    return float(np.real(np.vdot(a, b)))


def dense_dft(h, w):
    fh = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h) / np.sqrt(h)
    fw = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w) / np.sqrt(w)
    return np.kron(fh, fw)


def haar_step(n):
    """One level of the 1-D orthonormal Haar transform: averages then details."""
    a = np.zeros((n, n))
    for i in range(n // 2):
        a[i, 2 * i] = a[i, 2 * i + 1] = 1 / np.sqrt(2)
        a[n // 2 + i, 2 * i] = 1 / np.sqrt(2)
        a[n // 2 + i, 2 * i + 1] = -1 / np.sqrt(2)
    return a


def dense_haar(n):
    """Full-depth 2-D Haar on n x n images (row-major vec) from Kronecker factors."""
    w = np.eye(n * n)
    k = n
    while k > 1:
        # the level acts on the top-left k x k block only
        idx = (np.arange(k)[:, None] * n + np.arange(k)[None, :]).ravel()
        level = np.eye(n * n)
        level[np.ix_(idx, idx)] = np.kron(haar_step(k), haar_step(k))
        w = level @ w
        k //= 2
    return w


def dense(op, shape):
    cols = []
    for i in range(int(np.prod(shape))):
        e = np.zeros(int(np.prod(shape)))
        e[i] = 1.0
        cols.append(np.ravel(op(e.reshape(shape))))
    return np.array(cols).T


# -- Fourier sampling -----------------------------------------------------

def test_fourier_matches_dense_dft():
    rng = np.random.default_rng(0)
    x = rng.random((4, 8))
    mask = rng.random((4, 8)) < 0.5
    expected = (dense_dft(4, 8) @ x.ravel())[mask.ravel()]
    np.testing.assert_allclose(fourier_forward(x, mask), expected, atol=1e-12)


def test_fourier_full_mask_is_isometric():
    rng = np.random.default_rng(1)
    x = rng.random((8, 8))
    y = fourier_forward(x, np.ones((8, 8), dtype=bool))
    assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(x), rel=1e-12)


@given(sizes, seeds)
def test_fourier_adjointness(shape, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random(shape) < 0.5
    x = rng.standard_normal(shape)
    y = rng.standard_normal(int(mask.sum())) + 1j * rng.standard_normal(int(mask.sum()))
    lhs = _inner(fourier_forward(x, mask), y)
    rhs = _inner(x, fourier_adjoint(y, mask))
    assert abs(lhs - rhs) <= 1e-10 * max(np.linalg.norm(x) * np.linalg.norm(y), 1e-300)


def test_fourier_rejects_bad_mask():
    with pytest.raises(ValueError):
        fourier_forward(np.zeros((4, 4)), np.ones((4, 2), dtype=bool))


# -- Haar -----------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 4, 8])
def test_haar_matches_kronecker_oracle(n):
    rng = np.random.default_rng(n)
    x = rng.standard_normal((n, n))
    np.testing.assert_allclose(haar_forward(x).ravel(), dense_haar(n) @ x.ravel(), atol=1e-12)


def test_haar_constant_image_has_single_coefficient():
    c = haar_forward(np.ones((8, 8)))
    assert c[0, 0] == pytest.approx(8.0)
    assert np.abs(c).sum() == pytest.approx(8.0)


@given(sizes, seeds)
def test_haar_orthonormal(shape, seed):
    x = np.random.default_rng(seed).standard_normal(shape)
    c = haar_forward(x)
    assert abs(np.linalg.norm(c) - np.linalg.norm(x)) <= 1e-10 * (1 + np.linalg.norm(x))
    np.testing.assert_allclose(haar_adjoint(c), x, atol=1e-12)


@given(sizes, seeds)
def test_haar_adjointness(shape, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(shape), rng.standard_normal(shape)
    assert abs(_inner(haar_forward(x), y) - _inner(x, haar_adjoint(y))) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)


def test_haar_dense_matrix_is_orthogonal():
    w = dense(haar_forward, (8, 8))
    np.testing.assert_allclose(w.T @ w, np.eye(64), atol=1e-12)


@pytest.mark.parametrize("shape", [(3, 4), (6, 6), (8, 12)])
def test_haar_rejects_non_power_of_two(shape):
    with pytest.raises(ValueError):
        haar_forward(np.zeros(shape))


# -- differences ----------------------------------------------------------

def test_checkerboard_tv():
    x = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert tv_norm(x) == pytest.approx(8.0)


def test_constant_image_has_zero_tv():
    assert tv_norm(np.full((8, 8), 3.0)) == 0.0


def test_diff_is_periodic_forward_difference():
    x = np.arange(16.0).reshape(4, 4)
    g = diff_forward(x)
    np.testing.assert_allclose(g[0], np.roll(x, -1, axis=1) - x)
    np.testing.assert_allclose(g[1], np.roll(x, -1, axis=0) - x)


@given(sizes, seeds)
def test_diff_adjointness(shape, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    g = rng.standard_normal((2,) + shape)
    assert abs(_inner(diff_forward(x), g) - _inner(x, diff_adjoint(g))) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(g)


@given(sizes, seeds)
def test_linearity(shape, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(shape), rng.standard_normal(shape)
    a, b = rng.standard_normal(2)
    mask = rng.random(shape) < 0.5
    for op in (haar_forward, diff_forward, lambda v: fourier_forward(v, mask)):
        np.testing.assert_allclose(op(a * x + b * y), a * op(x) + b * op(y), atol=1e-10 * (1 + np.linalg.norm(x) + np.linalg.norm(y)))


def test_norm_helpers():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((8, 8))
    assert wavelet_l1(x) == pytest.approx(np.abs(haar_forward(x)).sum())
    assert tv_norm(x) == pytest.approx(np.abs(diff_forward(x)).sum())


# -- normal system ----------------------------------------------------------

def _apply_system(x, a, c, mask):
    return fourier_adjoint(fourier_forward(x, mask), mask) + a * x + c * diff_adjoint(diff_forward(x))


def test_identity_system_returns_rhs():
    rhs = np.random.default_rng(0).standard_normal((8, 8))
    np.testing.assert_allclose(solve_normal_system(rhs, 1.0, 0.0, np.zeros((8, 8), dtype=bool)), rhs, atol=1e-14)


weights = st.one_of(st.just(0.0), st.floats(1e-3, 3))


@given(sizes.filter(lambda s: s != (1, 1)), seeds, weights, weights, st.floats(0.05, 1))
def test_normal_system_residual(shape, seed, a, c, rate):
    rng = np.random.default_rng(seed)
    mask = rng.random(shape) < rate
    mask.flat[0] = True
    if a == 0 and not mask.all():
        a = 0.5
    rhs = rng.standard_normal(shape)
    x = solve_normal_system(rhs, a, c, mask)
    assert np.linalg.norm(_apply_system(x, a, c, mask) - rhs) <= 1e-8 * np.linalg.norm(rhs)


def test_normal_system_dense_oracle():
    rng = np.random.default_rng(4)
    mask = rng.random((4, 4)) < 0.5
    a, c = 0.3, 0.7
    f = dense_dft(4, 4)
    p = np.diag(mask.ravel().astype(float))
    d = dense(diff_forward, (4, 4))
    system = np.real(f.conj().T @ p @ f) + a * np.eye(16) + c * d.T @ d
    rhs = rng.standard_normal((4, 4))
    expected = np.linalg.solve(system, rhs.ravel())
    np.testing.assert_allclose(solve_normal_system(rhs, a, c, mask).ravel(), expected, atol=1e-10)


def test_normal_system_singular_raises():
    with pytest.raises(ValueError):
        solve_normal_system(np.ones((4, 4)), 0.0, 0.0, np.zeros((4, 4), dtype=bool))


def test_near_singular_system_raises():
    mask = np.zeros((2, 2), dtype=bool)
    mask[:, 0] = True
    with pytest.raises(ValueError):
        normal_symbol(mask, 1e-266, 0.0)


def test_normal_symbol_rejects_negative_weights():
    with pytest.raises(ValueError):
        normal_symbol(np.ones((4, 4), dtype=bool), -1.0, 0.0)
