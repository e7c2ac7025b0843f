import math

import numpy as np
import pytest

from graphshap.oracles import OrGateOracle
from graphshap.value import BackgroundDataset, GameConfig

OR_PHI = 0.5 * math.log2(4 / 3)


@pytest.fixture
def or_oracle():
    return OrGateOracle(2)


@pytest.fixture
def or_cfg():
    bg = BackgroundDataset([[0, 0], [0, 1], [1, 0], [1, 1]])
    return GameConfig([1, 1], bg)


@pytest.fixture
def rng():
    return np.random.default_rng(20190613)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in RESULTS:
        terminalreporter.write_line(line)
