"""
Shared fixtures; puts the code root on sys.path the way main.py does.
"""

import pathlib
import sys

import numpy as np
import pytest

CODE_ROOT = pathlib.Path(__file__).resolve().parents[1] / "dualrate"
if str(CODE_ROOT) not in sys.path:
    sys.path.insert(0, str(CODE_ROOT))

from data.gmm import benchmark_gmm  # noqa: E402
from diffusion.schedule import LogSnrSchedule  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long acceptance checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance check (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sched():
    return LogSnrSchedule()


@pytest.fixture
def gmm():
    return benchmark_gmm()
