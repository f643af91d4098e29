import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bfdca.dataset import Dataset
from bfdca.lower import AdmmConfig, solve_lower
from bfdca.operators import diff_forward, fourier_adjoint, fourier_forward, haar_forward, symmetrized_mask
from bfdca.penalty import (
    OuterPoint,
    PenaltyState,
    SubproblemConfig,
    _ShrinkRoot,
    branch_values,
    certificate_residual,
    eval_energy,
    eval_eta,
    eval_phi,
    eval_theta,
    inexactness_bound,
    lifted_projection,
    solve_subproblem,
)

from conftest import random_instance
from oracles import dense, real_system

TIGHT = AdmmConfig(max_iter=20000, primal_tol=1e-10, dual_tol=1e-10)


def make_state(seed=0, size=8, r=(1.0, 2.0), alpha=1.0, rho=1e-2, prev_step=None, x=None):
    _, mask, b = random_instance(seed, size=size)
    ds = Dataset.single(mask, b)
    low = solve_lower(ds, r, TIGHT)
    x = low.x_bar if x is None else x
    return PenaltyState(ds, OuterPoint(x.copy(), np.array(r, dtype=float)), low, alpha, rho, prev_step)


def test_outer_point_helpers():
    z = OuterPoint(np.ones((2, 2)), [3.0, 4.0])
    assert z.feasible
    assert z.norm() == pytest.approx(np.sqrt(4 + 25))
    assert z.distance(OuterPoint(np.zeros((2, 2)), [3.0, 4.0])) == pytest.approx(2.0)
    assert not OuterPoint(np.zeros((2, 2)), [-1.0, 0.0]).feasible


def test_state_validation():
    st_ = make_state()
    with pytest.raises(ValueError):
        PenaltyState(st_.dataset, st_.z_prev, st_.lower, -1.0, 1.0)
    with pytest.raises(ValueError):
        PenaltyState(st_.dataset, st_.z_prev, st_.lower, 1.0, 0.0)


def test_theta_vanishes_at_lower_solution():
    state = make_state()
    assert eval_theta(state.z_prev, state) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=10)
@given(st.integers(0, 10**6))
def test_theta_majorizes(seed):
    state = make_state(seed % 3)
    rng = np.random.default_rng(seed)
    x = rng.random(state.dataset.shape)
    r = rng.uniform(0.05, 5, size=2)
    h = solve_lower(state.dataset, r, TIGHT).value
    lhs = eval_theta(OuterPoint(x, r), state)
    assert lhs >= state.dataset.train_fidelity(x) - h - 1e-6


def test_phi_without_penalty():
    state = make_state(alpha=0.0, rho=0.5)
    z = OuterPoint(np.zeros(state.dataset.shape), [2.0, 1.0])
    dz2 = np.sum(state.z_prev.x ** 2) + np.sum((z.r - state.z_prev.r) ** 2)
    assert eval_phi(z, state) == pytest.approx(state.dataset.val_fidelity(z.x) + 0.25 * dz2, rel=1e-12)


def test_phi_rejects_negative_radius():
    state = make_state()
    with pytest.raises(ValueError):
        eval_phi(OuterPoint(state.z_prev.x, [-1.0, 0.0]), state)


def test_eta_zero_when_feasible():
    state = make_state()
    assert eval_eta(state.z_prev, state) == pytest.approx(0.0, abs=1e-10)


def test_eta_direct_formula():
    state = make_state(size=4)
    x = np.zeros((4, 4))
    x[0, 0] = 3.0 / 4.0  # constant image -> a single Haar coefficient 3, no TV
    x[:] = x[0, 0]
    z = OuterPoint(x, [0.0, 0.0])
    assert np.abs(haar_forward(x)).sum() == pytest.approx(3.0)
    assert eval_eta(z, state) >= 3.0 - 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_eta_matches_max_term_of_phi(seed):
    state = make_state(seed)
    rng = np.random.default_rng(seed)
    z = OuterPoint(rng.random(state.dataset.shape), rng.uniform(0, 3, size=2))
    probe = PenaltyState(state.dataset, z, state.lower, 1.0, 1.0)
    assert eval_eta(z, state) == pytest.approx(eval_phi(z, probe) - state.dataset.val_fidelity(z.x), abs=1e-12)
    assert eval_eta(z, state) == branch_values(z, state).max()


def test_energy_at_lower_solution():
    state = make_state()
    z = state.z_prev
    low = state.lower
    e = eval_energy(state.dataset, z, z, low.xi, 2.0, 1.0, low.value)
    slack = max(0.0, np.abs(haar_forward(z.x)).sum() - z.r[0], np.abs(diff_forward(z.x)).sum() - z.r[1])
    assert e == pytest.approx(state.dataset.val_fidelity(z.x) + 2.0 * slack, abs=1e-10)


def test_energy_reduces_to_fidelity():
    state = make_state()
    z = state.z_prev
    z2 = OuterPoint(z.x + 1.0, z.r + 1.0)
    assert eval_energy(state.dataset, z2, z, state.xi, 0.0, 0.0, state.h_value) == pytest.approx(
        state.dataset.val_fidelity(z2.x))
    assert eval_energy(state.dataset, OuterPoint(z.x, [-1, 0]), z, state.xi, 1.0, 1.0, 0.0) == np.inf


def test_inexactness_bound():
    state = make_state(prev_step=2.0, rho=0.1)
    assert inexactness_bound(state) == pytest.approx(np.sqrt(0.5) * 0.1 * 2.0)
    first = make_state(prev_step=None)
    assert inexactness_bound(first, SubproblemConfig(initial_budget=1e-3)) == pytest.approx(
        1e-3 * (1 + first.z_prev.norm()))


def test_closed_form_without_penalty():
    state = make_state(alpha=0.0, rho=0.3, r=(1.0, 2.0))
    res = solve_subproblem(state)
    ds, zp = state.dataset, state.z_prev
    f = dense(lambda v: fourier_forward(v, ds.mask_val), ds.shape)
    system = np.real(f.conj().T @ f) + 0.3 * np.eye(f.shape[1])
    rhs = fourier_adjoint(ds.b_val, ds.mask_val).ravel() + 0.3 * zp.x.ravel()
    np.testing.assert_allclose(res.z_next.x.ravel(), np.linalg.solve(system, rhs), atol=1e-6)
    np.testing.assert_allclose(res.z_next.r, zp.r)


def _phi_oracle(state):
    """Dense convex solve of the subproblem over (x, r >= 0)."""
    ds, zp, low = state.dataset, state.z_prev, state.lower
    shape = ds.shape
    a_tr, y_tr = real_system(ds.mask_tr, ds.b_tr)
    a_val, y_val = real_system(ds.mask_val, ds.b_val)
    w, d = dense(haar_forward, shape), dense(diff_forward, shape)
    x = cp.Variable(int(np.prod(shape)))
    r = cp.Variable(2)
    theta = 0.5 * cp.sum_squares(a_tr @ x - y_tr) - low.value + state.xi @ (r - zp.r)
    obj = (0.5 * cp.sum_squares(a_val @ x - y_val)
           + 0.5 * state.rho * (cp.sum_squares(x - zp.x.ravel()) + cp.sum_squares(r - zp.r))
           + state.alpha * cp.maximum(0, theta, cp.norm1(w @ x) - r[0], cp.norm1(d @ x) - r[1]))
    prob = cp.Problem(cp.Minimize(obj), [r >= 0])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value


def test_exact_solve_on_tiny_instance():
    rng = np.random.default_rng(5)
    state = make_state(seed=2, size=4, r=(0.5, 0.8), alpha=2.0, rho=0.5, prev_step=0.0,
                       x=rng.random((4, 4)))
    res = solve_subproblem(state, SubproblemConfig(max_iter=5000, final_cert_iter=3000))
    assert res.residual_norm <= 1e-8
    assert res.converged
    assert res.phi_value == pytest.approx(_phi_oracle(state), abs=1e-7)


@pytest.mark.parametrize("seed", range(3))
def test_subproblem_matches_dense_optimum(seed):
    rng = np.random.default_rng(seed)
    state = make_state(seed=seed, size=4, r=(0.6, 1.0), alpha=1.0, rho=0.1, x=rng.random((4, 4)))
    res = solve_subproblem(state, SubproblemConfig(max_iter=3000))
    ref = _phi_oracle(state)
    # an eps-subgradient e at z bounds the gap by eps + ||e|| * ||z - z_opt||
    assert ref - 1e-7 <= res.phi_value <= ref + res.eps + 10 * res.residual_norm + 1e-7


@pytest.mark.parametrize("seed", range(4))
def test_certificate_soundness_and_descent(seed):
    rng = np.random.default_rng(seed)
    state = make_state(seed=seed, alpha=rng.uniform(0.1, 5), rho=rng.uniform(1e-3, 1),
                       x=rng.random((8, 8)), prev_step=rng.uniform(0.1, 1))
    res = solve_subproblem(state, SubproblemConfig(max_iter=300))
    ex, er = certificate_residual(res.z_next, state, res.certificate)
    norm = np.sqrt(np.vdot(ex, ex) + er @ er)
    assert norm == pytest.approx(res.residual_norm, abs=1e-12)
    cert = res.certificate
    assert cert.nu.sum() == pytest.approx(state.alpha)
    assert np.all(cert.nu >= 0)
    assert np.all(np.abs(cert.S) <= cert.nu[2] + 1e-12)
    assert np.all(np.abs(cert.T) <= cert.nu[3] + 1e-12)
    assert cert.eps >= 0
    assert res.phi_value <= eval_phi(state.z_prev, state) + 1e-8
    assert res.z_next.feasible


def _reduced(nu, nu_t, a_s, a_t, alpha, kappa, om_s, om_t, A, sig, c):
    return (0.5 * np.sum(kappa * (nu - nu_t) ** 2)
            + 0.5 * om_s * np.sum(np.maximum(a_s - nu[2], 0) ** 2)
            + 0.5 * om_t * np.sum(np.maximum(a_t - nu[3], 0) ** 2)
            + sig * A / (2 * (nu[1] + sig)) + sig * c * nu[1])


@pytest.mark.parametrize("seed", range(6))
def test_lifted_projection_matches_convex_solver(seed):
    rng = np.random.default_rng(seed)
    nu_t = rng.standard_normal(4)
    a_s, a_t = np.abs(rng.standard_normal(12)), np.abs(rng.standard_normal(9))
    alpha = rng.uniform(0.2, 3)
    kappa = np.array([1.0, 1.0, 1.0, rng.uniform(0.5, 3)])
    om_s, om_t = rng.uniform(0.1, 2, size=2)
    A, sig, c = rng.uniform(0, 2), rng.uniform(0.1, 2), rng.standard_normal()
    nu = lifted_projection(nu_t, _ShrinkRoot(a_s, om_s), _ShrinkRoot(a_t, om_t), alpha, kappa,
                           quad_A=A, quad_sigma=sig, quad_c=c)

    v = cp.Variable(4)
    obj = (0.5 * cp.sum(cp.multiply(kappa, cp.square(v - nu_t)))
           + 0.5 * om_s * cp.sum_squares(cp.pos(a_s - v[2]))
           + 0.5 * om_t * cp.sum_squares(cp.pos(a_t - v[3]))
           + 0.5 * sig * A * cp.inv_pos(v[1] + sig) + sig * c * v[1])
    cp.Problem(cp.Minimize(obj), [v >= 0, cp.sum(v) == alpha]).solve(solver=cp.CLARABEL)
    args = (nu_t, a_s, a_t, alpha, kappa, om_s, om_t, A, sig, c)
    assert nu.sum() == pytest.approx(alpha)
    assert np.all(nu >= 0)
    assert _reduced(nu, *args) <= _reduced(v.value, *args) + 1e-7
    np.testing.assert_allclose(nu, v.value, atol=1e-4)


def test_shrink_root_solves_its_equation():
    rng = np.random.default_rng(0)
    a = np.abs(rng.standard_normal(20))
    root = _ShrinkRoot(a, 0.7)
    for t in np.linspace(-5, 10, 13):
        nu = root.solve(t, 1.3)
        lhs = 1.3 * nu - 0.7 * np.maximum(a - nu, 0).sum()
        if nu > 0:
            assert lhs == pytest.approx(t, abs=1e-10)
        else:
            assert lhs >= t - 1e-10
