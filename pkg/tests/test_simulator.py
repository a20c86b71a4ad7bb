import math

import numpy as np
import pytest

from robsae.inference import GammaGrid, MethodResult
from robsae.model import ModelParams, upper_quantile
from robsae.quadrature import QuadratureNotConverged, adaptive_gauss_legendre
from robsae.rng import replication_seed, splitmix64, stream
from robsae.simulator import (Contamination, SimScenario, _draw_u, generate_replication,
                              replication_metrics, run_fixed_gamma_study, run_monte_carlo,
                              separability_rho)

COARSE = GammaGrid.preset("coarse")


def test_scenario_defaults():
    sc = SimScenario("v")
    assert sc.id == "V" and sc.contamination == Contamination(0.10, 10.0, 1.0)
    assert SimScenario("I").contamination is None
    np.testing.assert_array_equal(sc.D[:20], 0.2)
    np.testing.assert_array_equal(sc.D[-20:], 2.0)
    with pytest.raises(ValueError):
        SimScenario("I", m=101)
    with pytest.raises(ValueError):
        Contamination(0.5, 0.0, 1.0)


def test_replication_is_deterministic():
    sc = SimScenario("III", 1.0)
    a, ta, _ = generate_replication(sc, 42)
    b, tb, _ = generate_replication(sc, 42)
    for u, v in ((a.y, b.y), (a.X, b.X), (ta, tb)):
        assert u.tobytes() == v.tobytes()
    c, _, _ = generate_replication(sc, 43)
    assert not np.array_equal(a.y, c.y)


def test_random_effect_centred():
    sc = SimScenario("I", 1.0, m=10 ** 6, d_pattern=(1.0,))
    data, theta, _ = generate_replication(sc, 5)
    resid = theta - data.X @ np.array(sc.beta)
    assert abs(resid.mean()) <= 3 * math.sqrt(1.0 / 10 ** 6)


def test_covariate_design():
    data, _, _ = generate_replication(SimScenario("I", m=10 ** 5), 9)
    assert set(np.unique(data.X[:, 2])) == {0.0, 1.0}
    assert abs(data.X[:, 2].mean() - 0.5) < 0.01
    assert abs(data.X[:, 1].std() - 1.0) < 0.01


def test_contamination_fraction():
    u = _draw_u(SimScenario("IV", m=10 ** 6, d_pattern=(1.0,)), replication_seed(3, 0), 0)
    assert np.mean(u > 5) == pytest.approx(0.05, abs=1e-3)


def test_perfect_estimator_metrics():
    theta = np.array([0.5, -1.0, 2.0])
    res = MethodResult("EB", 0.0, theta.copy(), np.ones(3), theta - 1, theta + 1, np.zeros(3, bool))
    sse, covered, length = replication_metrics(theta, res)
    assert sse == 0.0 and covered == 3 and length == 6.0


def test_monte_carlo_report_shape():
    rep = run_monte_carlo(SimScenario("I", 1.0, m=20), 4, COARSE, base_seed=1)
    assert rep.n_replications == 4 and rep.n_areas == 20
    assert set(rep.methods) == {"EB", "GD", "DR"}
    for s in rep.methods.values():
        assert s.mse >= 0 and 0 <= s.cp <= 100 and s.al >= 0
    d = rep.to_dict()
    assert d["scenario"]["id"] == "I" and len(rep.gamma_op) == 4
    assert "gamma_op" not in d


def test_thread_count_does_not_change_results():
    sc = SimScenario("V", 1.0, m=25)
    a = run_monte_carlo(sc, 6, COARSE, base_seed=2, threads=1)
    b = run_monte_carlo(sc, 6, COARSE, base_seed=2, threads=3)
    assert a.to_dict() == b.to_dict()


def test_fixed_gamma_zero_matches_eb():
    sc = SimScenario("IV", 1.0, m=25)
    mc = run_monte_carlo(sc, 5, COARSE, base_seed=4)
    (fixed,) = run_fixed_gamma_study(sc, [0.0], 5, base_seed=4)
    for key in ("mse", "cp", "al"):
        assert getattr(fixed.methods["GD"], key) == getattr(mc.methods["EB"], key)


def test_eb_length_cross_check():
    sc = SimScenario("I", 1.0)
    rep = run_monte_carlo(sc, 10, COARSE, base_seed=6)
    D = sc.D
    lengths = [2 * upper_quantile(0.05) * np.mean(np.sqrt(A * D / (A + D))) for A in rep.eb_A]
    assert rep.methods["EB"].al == pytest.approx(np.mean(lengths), rel=1e-12, abs=1e-12)


def test_failure_threshold():
    from robsae.estimator import SolverConfig
    from robsae.simulator import SimulationFailed
    with pytest.raises(SimulationFailed):
        run_monte_carlo(SimScenario("I", m=20), 3, COARSE,
                        config=SolverConfig(grad_tol=1e-300, max_iter=1))


def test_rho_closed_form():
    rho = separability_rho(ModelParams([0.0], 0.5), 0.0, 0.5, (0.5, 0.5), [0.0], 1.0)
    assert rho == pytest.approx((2 * math.pi) ** -0.5 * 2 ** -0.5, abs=1e-6)
    assert rho == pytest.approx(0.28209, abs=1e-5)


def test_rho_separated():
    params = ModelParams([0.0], 0.5)
    shift = 50 * math.sqrt(1.0)
    assert separability_rho(params, shift, 0.5, (0.5, 0.5), [0.0], 0.5) <= 1e-20


def test_rho_decreases_along_ray():
    params = ModelParams([0.0], 1.0)
    # the k = 2 moment grows until the contamination passes the peak of
    # |y - x'beta|^2 phi^gamma, so the ray starts beyond it
    vals = [separability_rho(params, d, 1.0, (0.2, 2.0), [0.0], 0.5) for d in np.arange(6, 60, 2)]
    assert np.all(np.diff(vals) <= 0)


def test_quadrature():
    assert adaptive_gauss_legendre(np.sin, 0, math.pi) == pytest.approx(2.0, abs=1e-12)
    val = adaptive_gauss_legendre(lambda x: np.exp(-0.5 * x * x), -40, 40, points=[-1, 0, 1])
    assert val == pytest.approx(math.sqrt(2 * math.pi), abs=1e-10)
    with pytest.raises(QuadratureNotConverged):
        adaptive_gauss_legendre(lambda x: np.abs(x - 1 / 3) ** -0.9, 0, 1, max_depth=4)


def test_rng_streams():
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    seeds = {replication_seed(b, r) for b in range(20) for r in range(20)}
    assert len(seeds) == 400
    a = stream(7, 2).random(5)
    assert np.array_equal(a, stream(7, 2).random(5))
    assert not np.array_equal(a, stream(7, 3).random(5))
    assert not np.array_equal(a, stream(7, 2, 1).random(5))
    # prefix property: area i always consumes the i-th draw
    assert np.array_equal(stream(7, 2).random(3), a[:3])
