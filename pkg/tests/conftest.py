import numpy as np
import pytest

from mzgrid.dynamics import DEFAULT_U0, GridParams
from mzgrid.kernel import build_kernel
from mzgrid.projection import HermiteBasis, Partition, build_quadrature

U_HAT0 = DEFAULT_U0[:3]

# lines reported by the acceptance suite, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def params():
    return GridParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_states(rng, n):
    u = rng.uniform(-1.0, 1.0, size=(n, 5))
    u[:, 4] = rng.uniform(0.5, 1.5, size=n)
    return u


def make_tables(order=1, horizon=2.0, dt=5e-5, convention="orthonormal", level=7, stride=1):
    basis = HermiteBasis.around(U_HAT0, order, 1e-4, convention)
    rule = build_quadrature(basis, level)
    return build_kernel(U_HAT0, basis, rule, Partition(), dt, horizon, stride)


@pytest.fixture(scope="session")
def short_tables():
    """Order-1 tables over a short horizon for fast checks."""
    return make_tables(order=1, horizon=0.05)


@pytest.fixture(scope="session")
def short_tables_p2():
    return make_tables(order=2, horizon=0.02)


@pytest.fixture(scope="session")
def tables_full_horizon():
    """Reference experiment: orthonormal p=1, dt=5e-5, horizon 2."""
    return make_tables(order=1, horizon=2.0)


@pytest.fixture(scope="session")
def tables_literal():
    """Same experiment in the un-normalized physicists' basis."""
    return make_tables(order=1, horizon=2.0, convention="physicists")


@pytest.fixture(scope="session")
def full_run():
    from mzgrid.dynamics import simulate_full
    return simulate_full(DEFAULT_U0, 5e-5, 2.0)
