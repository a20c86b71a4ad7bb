import numpy as np
import pytest

from robsae import _backend
from robsae.model import AreaDataset
from robsae.rng import replication_seed
from robsae.simulator import SimScenario, generate_replication

ACCEPTANCE_LINES = []

KERNELS = [pytest.param(_backend.python_kernels, id="python")]
if _backend.compiled_kernels is not None:
    KERNELS.append(pytest.param(_backend.compiled_kernels, id="compiled"))


@pytest.fixture(params=KERNELS)
def kernels(request):
    return request.param


def scenario_dataset(sid="I", A=1.0, m=100, seed=0):
    data, theta, _ = generate_replication(SimScenario(sid, A, m), replication_seed(seed, 0))
    return data, theta


@pytest.fixture
def scenario_i():
    return scenario_dataset("I", 1.0, 100, 0)[0]


@pytest.fixture
def scenario_i_m30():
    return scenario_dataset("I", 1.0, 30, 5)[0]


@pytest.fixture
def equal_variance_data():
    return AreaDataset([-1.0, 0.0, 1.0], [0.5, 0.5, 0.5], np.ones((3, 1)))


def random_instance(rng, m=50, p=3):
    X = np.column_stack([np.ones(m), rng.standard_normal((m, p - 1))])
    D = rng.uniform(0.2, 2.0, m)
    beta = rng.normal(0, 1, p)
    A = rng.uniform(0.3, 3.0)
    y = X @ beta + rng.normal(0, np.sqrt(A + D))
    return AreaDataset(y, D, X), beta, A


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
