import numpy as np
import pytest

from ccsynth.config import load_config, shipped_config
from ccsynth.synthesis import synthesize


@pytest.fixture(scope="session")
def force_cfg():
    return load_config(shipped_config("force_control"))


@pytest.fixture(scope="session")
def guiding_cfg():
    return load_config(shipped_config("hand_guiding"))


@pytest.fixture(scope="session")
def robot(force_cfg):
    # the robot the shipped designs were synthesized for (exact fractional delay)
    return force_cfg.robot()


@pytest.fixture(scope="session")
def force_result(force_cfg):
    return synthesize(force_cfg.problem())


@pytest.fixture(scope="session")
def guiding_result(guiding_cfg):
    return synthesize(guiding_cfg.problem())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
