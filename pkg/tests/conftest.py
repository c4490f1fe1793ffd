import numpy as np
import pytest
from hypothesis import settings

from sffsim.world import VehicleShape

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

SEDAN = VehicleShape(4.5, 1.9, 2.7, "sedan")
TRUCK = VehicleShape(7.0, 2.4, 4.0, "truck")


@pytest.fixture
def sedan():
    return SEDAN


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
