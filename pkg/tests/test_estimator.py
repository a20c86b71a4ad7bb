import numpy as np
import pytest

from robsae import _pykernels
from robsae.estimator import DEFAULT_CONFIG, SolverConfig, fit_gamma, fit_ml
from robsae.model import A_MIN, AreaDataset
from robsae.objective import gamma_objective, marginal_loglik

from conftest import random_instance, scenario_dataset


def test_closed_form_equal_variances(equal_variance_data):
    fit = fit_ml(equal_variance_data)
    assert fit.converged and fit.gamma == 0.0
    assert fit.params.beta[0] == pytest.approx(0.0, abs=1e-7)
    assert fit.params.A == pytest.approx(1.0 / 6.0, abs=1e-7)
    assert not fit.a_floored


def test_boundary_clamp():
    data = AreaDataset([-0.1, 0.0, 0.1], [0.5] * 3, np.ones((3, 1)))
    fit = fit_ml(data)
    assert fit.a_floored and fit.converged
    assert fit.params.A == A_MIN
    assert fit.params.beta[0] == pytest.approx(0.0, abs=1e-12)


def test_large_sample_consistency():
    data, _ = scenario_dataset("I", 1.0, 10000, 3)
    fit = fit_ml(data)
    assert 0.9 < fit.params.A < 1.1
    np.testing.assert_allclose(fit.params.beta, [0.0, -1.0, 1.0], atol=0.05)


def test_tiny_gamma_reduces_to_ml(scenario_i):
    ml = fit_ml(scenario_i)
    fit = fit_gamma(scenario_i, 1e-8, ml=ml)
    np.testing.assert_allclose(fit.params.as_vector(), ml.params.as_vector(), atol=1e-5)


def test_gamma_zero_delegates(scenario_i):
    ml = fit_ml(scenario_i)
    fit = fit_gamma(scenario_i, 0.0)
    np.testing.assert_array_equal(fit.params.as_vector(), ml.params.as_vector())


def test_outlier_is_ignored_by_gamma_fit(scenario_i_m30):
    spiked = scenario_i_m30.with_y(0, 1e6)
    full = fit_gamma(spiked, 0.5)
    loo = fit_gamma(scenario_i_m30.drop(0), 0.5)
    assert full.converged and loo.converged
    np.testing.assert_allclose(full.params.as_vector(), loo.params.as_vector(), rtol=1e-3)


def test_outlier_inflates_ml_variance(scenario_i_m30):
    fit = fit_ml(scenario_i_m30.with_y(0, 1e6))
    assert fit.params.A >= 1e8


@pytest.mark.parametrize("gamma", [0.0, 0.2, 0.7])
def test_monotone_ascent(gamma):
    rng = np.random.default_rng(4)
    data, beta, A = random_instance(rng, m=40)
    trace = []
    if gamma == 0:
        _pykernels.fit_ml(data.y, data.X, data.D, 1e-10, 200, 0.5, A_MIN, trace=trace)
    else:
        _pykernels.fit_gamma(data.y, data.X, data.D, beta * 1.3, A * 3, gamma,
                             1e-10, 200, 0.5, A_MIN, trace=trace)
    f = np.array(trace)
    assert len(f) > 2
    assert np.all(np.diff(f) >= -1e-12 * (1 + np.abs(f[:-1])))


@pytest.mark.parametrize("gamma", [0.0, 0.1, 0.5, 1.0])
def test_stationarity(gamma):
    rng = np.random.default_rng(8)
    for _ in range(5):
        data, _, _ = random_instance(rng)
        fit = fit_gamma(data, gamma)
        assert fit.converged
        obj = marginal_loglik if gamma == 0 else (lambda d, q: gamma_objective(d, q, gamma))
        g = obj(data, fit.params).grad
        # unconstrained coordinates are (beta, log(A - A_MIN))
        g[-1] *= fit.params.A - A_MIN
        assert np.max(np.abs(g)) / data.m <= DEFAULT_CONFIG.grad_tol


def test_beta_scale_equivariance():
    rng = np.random.default_rng(21)
    data, _, _ = random_instance(rng, m=60, p=3)
    M = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    fit = fit_ml(data)
    fit_m = fit_ml(AreaDataset(data.y, data.D, data.X @ M))
    np.testing.assert_allclose(fit_m.params.beta, np.linalg.solve(M, fit.params.beta), rtol=1e-6,
                               atol=1e-9)
    assert fit_m.params.A == pytest.approx(fit.params.A, rel=1e-6)


def test_bit_reproducible(scenario_i):
    a = fit_gamma(scenario_i, 0.3)
    b = fit_gamma(scenario_i, 0.3)
    assert a.params.as_vector().tobytes() == b.params.as_vector().tobytes()
    assert a.objective_value == b.objective_value


def test_non_convergence_is_flagged(scenario_i):
    fit = fit_gamma(scenario_i, 0.5, SolverConfig(grad_tol=1e-30, max_iter=3, n_starts=1))
    assert not fit.converged
    assert fit.iterations == 3


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(n_starts=0)
    with pytest.raises(ValueError):
        SolverConfig(step_shrink=1.0)
