import numpy as np
import pytest

from lad.bandit import make_env
from lad.distribution import AdvantageSpec

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def default_env():
    return make_env(AdvantageSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
