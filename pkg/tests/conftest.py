"""Shared pytest fixtures: seeded generators, small costmaps and quiet logging."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from src.app.costmap import WorldCostmap
from src.app.logger import set_quiet

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(autouse=True)
def _quiet_logs():
    set_quiet(True)
    yield
    set_quiet(False)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


def make_world(data, resolution: float = 1.0, origin=(0.0, 0.0)) -> WorldCostmap:
    return WorldCostmap(np.asarray(data, dtype=np.int16), origin=origin, resolution=resolution)


@pytest.fixture
def free_world() -> WorldCostmap:
    return make_world(np.zeros((10, 10)))


@pytest.fixture
def cloth_world() -> WorldCostmap:
    """8 x 4 m at 0.1 m with a cost-60 patch straddling the y = 0 line between x = 1.5 and 3.5."""
    data = np.zeros((40, 80), dtype=np.int16)
    data[16:25, 25:45] = 60
    return make_world(data, resolution=0.1, origin=(-1.0, -2.0))
