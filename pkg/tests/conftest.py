import numpy as np
import pytest

from morawetz.geometry import Geometry, MultiplierParams

# smallest alpha of the default log-spaced scan that passes every check
CERTIFIED_ALPHA = 10 ** (17 / 8)


@pytest.fixture(scope="session")
def g():
    return Geometry(1.0)


@pytest.fixture(scope="session")
def params(g):
    return MultiplierParams.from_alpha(CERTIFIED_ALPHA, g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
