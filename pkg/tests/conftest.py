import numpy as np
import pytest

from tlfault.featurex import build_dataset, prepare
from tlfault.powersim import GridAxes, LineParams, generate_grid


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running (training or full-grid) test")


@pytest.fixture(scope="session")
def reduced_records():
    return generate_grid(LineParams(), GridAxes.reduced(), seed=11)


@pytest.fixture(scope="session")
def reduced_dataset(reduced_records):
    return build_dataset(reduced_records)


@pytest.fixture(scope="session")
def reduced_split(reduced_dataset):
    return prepare(reduced_dataset, 0.7, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.lines():
            terminalreporter.write_line(line)
