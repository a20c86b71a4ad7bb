import numpy as np
import pytest

from robsae import _backend
from robsae.model import A_MIN

from conftest import random_instance

pytestmark = pytest.mark.skipif(_backend.compiled_kernels is None, reason="extension not built")

py, cc = _backend.python_kernels, _backend.compiled_kernels


def instances(n=10, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        data, beta, A = random_instance(rng, m=40)
        yield data, beta, A


@pytest.mark.parametrize("gamma", [0.01, 0.5, 1.0])
def test_objective_agreement(gamma):
    for data, beta, A in instances():
        f1, g1 = py.gamma_obj_grad(data.y, data.X, data.D, beta, A, gamma)
        f2, g2 = cc.gamma_obj_grad(data.y, data.X, data.D, beta, A, gamma)
        assert f1 == pytest.approx(f2, rel=1e-13, abs=1e-13)
        np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-12)
        f1, g1 = py.ml_obj_grad(data.y, data.X, data.D, beta, A)
        f2, g2 = cc.ml_obj_grad(data.y, data.X, data.D, beta, A)
        assert f1 == pytest.approx(f2, rel=1e-13)
        np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("gamma", [0.0, 0.3])
def test_moment_agreement(gamma):
    for data, beta, A in instances():
        t1, s1 = py.robust_moments(data.y, data.X, data.D, beta, A, gamma)
        t2, s2 = cc.robust_moments(data.y, data.X, data.D, beta, A, gamma)
        np.testing.assert_allclose(t1, t2, rtol=1e-13)
        np.testing.assert_allclose(s1, s2, rtol=1e-12, atol=1e-14)


def test_solver_agreement():
    for data, beta, A in instances(seed=3):
        a = py.fit_ml(data.y, data.X, data.D, 1e-8, 200, 0.5, A_MIN)
        b = cc.fit_ml(data.y, data.X, data.D, 1e-8, 200, 0.5, A_MIN)
        np.testing.assert_allclose(a[0], b[0], rtol=1e-7, atol=1e-9)
        assert a[1] == pytest.approx(b[1], rel=1e-7) and a[2] == b[2]
        a = py.fit_gamma(data.y, data.X, data.D, beta, A, 0.4, 1e-8, 200, 0.5, A_MIN)
        b = cc.fit_gamma(data.y, data.X, data.D, beta, A, 0.4, 1e-8, 200, 0.5, A_MIN)
        np.testing.assert_allclose(a[0], b[0], rtol=1e-6, atol=1e-8)
        assert a[1] == pytest.approx(b[1], rel=1e-6) and a[2] == b[2]


def test_backend_flag():
    assert _backend.BACKEND in ("python", "compiled")


@pytest.mark.parametrize("name", ["python", "compiled"])
def test_backend_env_selection(name):
    import os
    import subprocess
    import sys
    env = dict(os.environ, SAE_BACKEND=name)
    out = subprocess.run([sys.executable, "-c", "import robsae; print(robsae.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == name
