"""Shared fixtures for the sat_planner test suite.

Library tests build small grids and beliefs directly. Harness, CLI and
MCP tests use ``tiny_scenario``: a 20 m x 20 m map with a handful of
particles and a short episode, written to ``tmp_path``, so closed-loop
runs finish in well under a second. Full-scale checks live in
``tests/acceptance`` and are marked ``slow``.
"""

import json
import math

import numpy as np
import pytest
from fastmcp import Client

from sat_planner.config import SensorConfig
from sat_planner.environment import CellState, OccupancyGrid
from sat_planner.models import SystemModel
from sat_planner.server import mcp

TINY_MAP_SIZE = 40  # cells, 0.5 m each


def tiny_map_text(wall: bool = True) -> str:
    """20 m x 20 m map with a border and, optionally, a wall with a doorway at x = 10 m."""
    rows = []
    for j in range(TINY_MAP_SIZE):
        row = []
        for i in range(TINY_MAP_SIZE):
            border = i in (0, TINY_MAP_SIZE - 1) or j in (0, TINY_MAP_SIZE - 1)
            divider = wall and i == 20 and not 16 <= j <= 23
            row.append("#" if border or divider else ".")
        rows.append("".join(row))
    return "\n".join([f"{TINY_MAP_SIZE} {TINY_MAP_SIZE} 0.5 0 0", *rows]) + "\n"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def open_grid():
    """Obstacle-free 20 m x 20 m grid centred on the origin."""
    return OccupancyGrid.filled(40, 40, 0.5, origin=(-10.0, -10.0))


@pytest.fixture
def walled_grid():
    """Open grid with a solid wall across x in [2, 2.5) for every y."""
    cells = np.zeros((40, 40), dtype=np.int8)
    cells[:, 24] = CellState.OCCUPIED
    return OccupancyGrid(cells, 0.5, (-10.0, -10.0))


@pytest.fixture
def camera():
    return SensorConfig()


@pytest.fixture
def wide_camera():
    """Near-omnidirectional sensor with a long range."""
    return SensorConfig(max_range=30.0, half_angle=math.pi)


@pytest.fixture
def models():
    return SystemModel()


@pytest.fixture
def tiny_scenario(tmp_path):
    """Path of a small, fast scenario whose static target starts in view."""
    maps = tmp_path / "maps"
    maps.mkdir()
    (maps / "tiny.map").write_text(tiny_map_text(), encoding="utf-8")
    scenario = {
        "map": "maps/tiny.map",
        "robot_start": [3.0, 10.0, 0.0],
        "target": {"start": [6.0, 10.0]},
        "initial_belief": [
            {"mean": [6.0, 10.0], "cov": [[0.5, 0.0], [0.0, 0.5]], "weight": 0.5},
            {"mean": [15.0, 15.0], "cov": [[1.0, 0.0], [0.0, 1.0]], "weight": 0.5},
        ],
        "n_particles": 40,
        "episode_steps": 4,
        "planner": {"n_max": 8, "horizon": 3, "horizon_tracking": 2},
        "hierarchy": {"l_c": 5.0, "l_f": 1.0},
        "known_map": True,
        "seed": 3,
    }
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(scenario), encoding="utf-8")
    return path


@pytest.fixture
async def mcp_client():
    """Client connected to the MCP server."""
    async with Client(mcp) as client:
        yield client
