import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robsae.model import AreaDataset, ModelParams
from robsae.objective import (finite_difference_grad, gamma_objective, gamma_term,
                              marginal_logdensity, marginal_loglik)

from conftest import random_instance


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))


def test_single_area_loglik():
    data = AreaDataset([0.0], [0.5], np.ones((1, 1)))
    out = marginal_loglik(data, ModelParams([0.0], 0.5))
    assert out.value == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
    assert out.value == pytest.approx(-0.9189385, abs=1e-7)


def test_score_vanishes_at_closed_form_mle(equal_variance_data):
    out = marginal_loglik(equal_variance_data, ModelParams([0.0], 1.0 / 6.0))
    np.testing.assert_allclose(out.grad, 0.0, atol=1e-8)


def test_loglik_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(20):
        data, beta, A = random_instance(rng)
        params = ModelParams(beta + rng.normal(0, 0.1, beta.size), A * rng.uniform(0.7, 1.3))
        analytic = marginal_loglik(data, params).grad
        numeric = finite_difference_grad(lambda q: marginal_loglik(data, q).value, params)
        assert rel_err(analytic, numeric) <= 1e-6


@pytest.mark.parametrize("gamma", [0.05, 0.3, 1.0])
def test_gamma_gradient_matches_finite_differences(gamma):
    rng = np.random.default_rng(int(gamma * 100))
    for _ in range(20):
        data, beta, A = random_instance(rng)
        params = ModelParams(beta + rng.normal(0, 0.1, beta.size), A * rng.uniform(0.7, 1.3))
        analytic = gamma_objective(data, params, gamma).grad
        numeric = finite_difference_grad(lambda q: gamma_objective(data, q, gamma).value, params)
        assert rel_err(analytic, numeric) <= 1e-6


def test_gamma_term_unit_value():
    s = 1.0 / (2 * math.pi)
    params = ModelParams([0.0], s / 2)
    assert gamma_term(0.0, [1.0], s / 2, params, 1.0) == pytest.approx(1.0, rel=1e-14)


def test_gamma_term_small_gamma_limit():
    params = ModelParams([0.3], 0.8)
    for y in (-1.0, 0.2, 2.5):
        gamma = 1e-6
        lhs = gamma_term(y, [1.0], 0.6, params, gamma) - 1 / gamma
        assert lhs == pytest.approx(float(marginal_logdensity(y, [1.0], 0.6, params)), abs=1e-4)


def test_gamma_term_tail_decay():
    params = ModelParams([0.0], 1.0)
    vals = [gamma_term(y, [1.0], 1.0, params, 0.5) for y in (10.0, 50.0, 1e3, -1e6)]
    assert vals[0] > vals[1] > vals[2] >= vals[3]
    assert vals[-1] == 0.0


def test_gamma_term_rejects_nonpositive_gamma():
    with pytest.raises(ValueError):
        gamma_term(0.0, [1.0], 1.0, ModelParams([0.0], 1.0), 0.0)


@settings(max_examples=200, deadline=None)
@given(y=st.floats(-50, 50), b=st.floats(-5, 5), A=st.floats(1e-3, 10),
       D=st.floats(1e-2, 10), gamma=st.floats(1e-3, 1.0))
def test_gamma_term_bounded(y, b, A, D, gamma):
    params = ModelParams([b], A)
    val = gamma_term(y, [1.0], D, params, gamma)
    cap = (2 * math.pi * (A + D)) ** (-gamma / (2 * (1 + gamma))) / gamma
    assert 0.0 <= val <= cap * (1 + 1e-12)
    if y != b:
        at_mode = gamma_term(b, [1.0], D, params, gamma)
        assert val <= at_mode


@pytest.mark.parametrize("gamma", [1e-4, 1e-6])
def test_gamma_objective_continuity(scenario_i, gamma):
    params = ModelParams([0.0, -1.0, 1.0], 1.0)
    gap = gamma_objective(scenario_i, params, gamma).value - scenario_i.m / gamma
    ml = marginal_loglik(scenario_i, params).value
    # error is O(gamma) times the sum of squared log-densities
    assert abs(gap - ml) < 1e4 * gamma


def test_tiny_gamma_gradient_matches_score(scenario_i):
    params = ModelParams([0.1, -0.9, 1.2], 0.8)
    g = gamma_objective(scenario_i, params, 1e-8).grad
    s = marginal_loglik(scenario_i, params).grad
    np.testing.assert_allclose(g, s, rtol=1e-5)


def test_zero_residual_beta_gradient():
    data = AreaDataset([1.5], [0.7], np.array([[1.0, 0.5]]))
    params = ModelParams([1.0, 1.0], 0.4)
    grad = gamma_objective(data, params, 0.5).grad
    assert np.all(grad[:2] == 0.0)
