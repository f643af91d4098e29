import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bfdca.dataset import Dataset
from bfdca.driver import BfdcaConfig, run_bfdca, update_alpha, update_rho
from bfdca.lower import AdmmConfig
from bfdca.operators import tv_norm, wavelet_l1
from bfdca.penalty import OuterPoint, SubproblemConfig

from conftest import random_instance


def alpha_rule(alpha, delta, eta, c, step, cap):
    # written from the rule statement, independently of the package
    lhs = math.inf if eta == 0 else max(alpha, 1.0 / eta)
    rhs = math.inf if delta == 0 else c / delta
    if eta > 0 and lhs < rhs:
        return min(alpha + step, cap)
    return alpha


def test_alpha_examples():
    cfg = BfdcaConfig()
    assert update_alpha(0.3, 0.5, 0.0, cfg) == 0.3
    assert update_alpha(0.0, 0.5, 10.0, cfg) == pytest.approx(0.005)
    capped = BfdcaConfig(alpha_max=10.0)
    assert update_alpha(10.0, 1e-6, 10.0, capped) == 10.0


def test_alpha_grows_on_stalled_infeasible_step():
    assert update_alpha(1.0, 0.0, 0.5, BfdcaConfig()) == pytest.approx(1.005)


@given(st.floats(0, 10), st.floats(0, 100), st.floats(0, 100), st.floats(0.01, 10), st.floats(1e-4, 1))
def test_alpha_rule_matches_reference(alpha, delta, eta, c, step):
    cfg = BfdcaConfig(c_alpha=c, delta_alpha=step, alpha_max=10.5)
    assert update_alpha(alpha, delta, eta, cfg) == alpha_rule(alpha, delta, eta, c, step, 10.5)


def test_rho_examples():
    cfg = BfdcaConfig()
    assert update_rho(1e-3, 5.0, cfg) == 1e-3
    grow = BfdcaConfig(delta_rho=0.1, rho0=0.1, rho_max=0.15, c_rho=1.0)
    assert update_rho(0.1, 0.0, grow) == 0.1
    assert update_rho(0.1, 2.0, grow) == pytest.approx(0.15)
    assert update_rho(0.15, 2.0, grow) == 0.15


def test_negative_inputs_rejected():
    with pytest.raises(ValueError):
        update_alpha(0.0, -1.0, 1.0, BfdcaConfig())
    with pytest.raises(ValueError):
        update_rho(1.0, -1.0, BfdcaConfig())


@pytest.mark.parametrize("kwargs", [
    {"c_alpha": 0}, {"tol": 0}, {"rho0": 0}, {"delta_alpha": -1}, {"alpha_max": 0.0},
    {"rho0": 1.0, "rho_max": 0.5}, {"max_outer": 0}, {"r0": (-1.0, 1.0)}, {"max_time": 0.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        BfdcaConfig(**kwargs)


def _fast(**kw):
    base = dict(lower=AdmmConfig(max_iter=500), inner=SubproblemConfig(max_iter=60))
    base.update(kw)
    return BfdcaConfig(**base)


def test_huge_tolerance_stops_after_one_step(small_dataset):
    trace = run_bfdca(small_dataset, _fast(tol=1e6))
    assert len(trace) == 1
    assert trace.records[0].k == 1
    assert trace.converged


def test_exact_recovery_on_full_noiseless_data(full_mask_dataset):
    x = full_mask_dataset.ground_truth
    r0 = (2 * wavelet_l1(x), 2 * tv_norm(x))
    trace = run_bfdca(full_mask_dataset, _fast(r0=r0))
    assert trace.converged
    assert len(trace) <= 5
    assert trace.records[-1].metrics["rlne"] <= 1e-4
    assert full_mask_dataset.val_fidelity(trace.z.x) <= 1e-8


@pytest.fixture(scope="module")
def noisy_trace():
    _, mask, b = random_instance(3, noise=0.1)
    ds = Dataset.single(mask, b)
    return ds, run_bfdca(ds, _fast(max_outer=40, rho0=1e-2, rho_max=1e-2))


def test_parameters_monotone_and_capped(noisy_trace):
    _, trace = noisy_trace
    alpha, rho = trace.column("alpha"), trace.column("rho")
    assert np.all(np.diff(alpha) >= 0) and np.all(alpha <= 10.0)
    assert np.all(np.diff(rho) >= 0) and np.all(rho <= 1e-2)


def test_trace_well_formed(noisy_trace):
    _, trace = noisy_trace
    assert [rec.k for rec in trace.records] == list(range(1, len(trace) + 1))
    assert np.all(trace.column("eta") >= 0)
    assert np.all(trace.column("delta") >= 0)
    assert all(rec.z.feasible for rec in trace.records)
    if trace.converged:
        last = trace.records[-1]
        assert max(last.delta, last.eta) < 1e-3


def test_energy_descent(noisy_trace):
    _, trace = noisy_trace
    for rec in trace.records[1:]:
        assert rec.energy + 0.25 * rec.rho * rec.delta ** 2 <= rec.energy_prev + 1e-6


def test_final_lower_matches_final_radii(noisy_trace):
    _, trace = noisy_trace
    np.testing.assert_array_equal(trace.lower.r, trace.z.r)


def test_callback_sees_every_record(small_dataset):
    seen = []
    trace = run_bfdca(small_dataset, _fast(max_outer=3, tol=1e-12), callback=seen.append)
    assert seen == trace.records
    assert not trace.converged


def test_time_budget(small_dataset):
    trace = run_bfdca(small_dataset, _fast(max_outer=500, tol=1e-12, max_time=1e-9))
    assert trace.timed_out and len(trace) == 1


def test_initial_point_checked(small_dataset):
    bad = OuterPoint(np.zeros((4, 4)), [1.0, 1.0])
    with pytest.raises(ValueError):
        run_bfdca(small_dataset, _fast(z0=bad))


def test_deterministic(small_dataset):
    a = run_bfdca(small_dataset, _fast(max_outer=5))
    b = run_bfdca(small_dataset, _fast(max_outer=5))
    np.testing.assert_array_equal(a.z.x, b.z.x)
    np.testing.assert_array_equal(a.column("eta"), b.column("eta"))
