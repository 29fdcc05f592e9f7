import numpy as np
import pytest

from tpifilter.config import default_config
from tpifilter.game import GameWeights
from tpifilter.plant import BicycleParams, NoiseBounds, bicycle_plant

VEHICLE = BicycleParams(m=1500.0, a=1.14, b=1.40, k_f=-88000.0, k_r=-94000.0, I_zz=2420.0, u_lon=20.0)


@pytest.fixture(scope="session")
def plant():
    return bicycle_plant(VEHICLE)


@pytest.fixture(scope="session")
def quad_weights():
    return GameWeights(20.0 * np.eye(2), 10.0 * np.eye(2), np.eye(2), 1.0)


@pytest.fixture(scope="session")
def bounds():
    return NoiseBounds([0.01, 0.05], [0.01, 0.05])


@pytest.fixture(scope="session")
def bounded_weights(bounds):
    return GameWeights(0.2 * np.eye(2), 0.1 * np.eye(2), np.eye(2), 1.0, bounds=bounds, mode="bounded")


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
