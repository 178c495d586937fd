import numpy as np
import pytest

from hybridfdi.dataset import GenerationConfig
from hybridfdi.plant import Plant

# PASS/FAIL lines recorded by the acceptance suite, echoed after the run
ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale end-to-end run")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def plant():
    return Plant()


@pytest.fixture(scope="session")
def small_generation():
    return GenerationConfig(n_healthy_flights=4, snapshots_per_flight=60, n_initial_healthy=20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
