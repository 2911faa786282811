import numpy as np
import pytest

from advbilevel import BilevelProblem

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_problem(seed=0, n=4, m=2, q=3, delta=0.9, rho=100.0, normalize=True):
    r = np.random.default_rng(seed)
    D = r.standard_normal((n, q))
    gamma = np.array([i % 2 for i in range(n)])
    X0 = r.standard_normal((m, q))
    return BilevelProblem.from_arrays(D, gamma, X0, delta=delta, rho=rho, normalize=normalize)


@pytest.fixture
def problem():
    return small_problem()
