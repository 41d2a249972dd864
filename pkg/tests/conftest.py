import numpy as np
import pytest

from gridframe.dcmodel import build_model
from gridframe.netmodel import load_case

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def net14():
    return load_case("ieee14")


@pytest.fixture(scope="session")
def model14(net14):
    return build_model(net14)


@pytest.fixture(scope="session")
def net118():
    return load_case("ieee118")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
