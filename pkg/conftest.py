import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the engine directory to Python path
ROOT = Path(__file__).resolve().parent
sys.path.insert(0, os.fspath(ROOT / "engine"))

from app.core.geometry import GridWorld  # noqa: E402
from app.utils.world_parser import WorldFileParser  # noqa: E402

DESK_WORLD = ROOT / "worlds" / "desk.txt"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def desk_world() -> GridWorld:
    return WorldFileParser.parse_world(DESK_WORLD)


@pytest.fixture
def open_world() -> GridWorld:
    """10 x 10 m room at 0.2 m with a one-cell wall border"""
    cells = np.zeros((50, 50), dtype=bool)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = True
    return GridWorld(cells, 0.2)
