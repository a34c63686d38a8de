import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dnls_lab.ground_state import continue_branch
from dnls_lab.lattice import Lattice
from dnls_lab.linearization import build_linearization
from dnls_lab.potentials import q_star

settings.register_profile(
    "lab", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture]
)
settings.load_profile("lab")


@pytest.fixture(scope="session")
def q03():
    return q_star(Lattice.symmetric(256), 0.3)


@pytest.fixture(scope="session")
def branch(q03):
    return continue_branch(q03)


@pytest.fixture(scope="session")
def lin(branch):
    return build_linearization(branch, float(branch.omegas[3]))


@pytest.fixture(scope="session")
def branch320():
    return continue_branch(q_star(Lattice.symmetric(320), 0.3))


@pytest.fixture(scope="session")
def lin320(branch320):
    return build_linearization(branch320, float(branch320.omegas[3]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)



def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
