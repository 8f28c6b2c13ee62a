"""Tests for the occupancy grid, ray casting, FOV checks, lidar mapping and path lengths."""
# pylint: disable=missing-function-docstring,protected-access

import math

import numpy as np
import pytest

from sat_planner.config import SensorConfig, SensorKind
from sat_planner.environment import (
    CLEAR,
    CellState,
    OccupancyGrid,
    astar_distance,
    dump_map,
    is_inside_fov,
    load_map,
    motion_collides,
    path_length_matrix,
    query,
    raycast,
    update_map,
    visible_mask,
    wrap_angle,
)
from sat_planner.errors import InputDomainError, MapParseError
from sat_planner.models import RobotPose


def _strip_grid(occupied_i=None, width=10):
    """One-row grid of 1 m cells centred on integer x coordinates."""
    cells = np.zeros((1, width), dtype=np.int8)
    if occupied_i is not None:
        cells[0, occupied_i] = CellState.OCCUPIED
    return OccupancyGrid(cells, 1.0, (-0.5, -0.5))


# ===================================================================
# Grid basics
# ===================================================================


def test_grid_rejects_bad_geometry():
    with pytest.raises(InputDomainError):
        OccupancyGrid(np.zeros((0, 3), dtype=np.int8), 1.0)
    with pytest.raises(InputDomainError):
        OccupancyGrid(np.zeros((2, 2), dtype=np.int8), 0.0)
    with pytest.raises(InputDomainError):
        OccupancyGrid(np.full((2, 2), 7, dtype=np.int8), 1.0)


def test_grid_cells_are_read_only(open_grid):
    with pytest.raises(ValueError):
        open_grid.cells[0, 0] = CellState.OCCUPIED


def test_cell_conversion_round_trips(open_grid, rng):
    for x, y in rng.uniform(-9.9, 9.9, size=(50, 2)):
        i, j = open_grid.cell_of(x, y)
        cx, cy = open_grid.cell_center(i, j)
        assert open_grid.cell_of(cx, cy) == (i, j)
        assert abs(cx - x) <= 0.25 + 1e-12 and abs(cy - y) <= 0.25 + 1e-12


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    wrapped = wrap_angle(np.linspace(-10, 10, 101))
    assert np.all(wrapped > -math.pi) and np.all(wrapped <= math.pi)


def test_blocked_mask_inflates_obstacles(walled_grid):
    plain = walled_grid.blocked_mask(0.0)
    inflated = walled_grid.blocked_mask(0.6)
    assert plain.sum() == 40
    assert inflated.sum() > plain.sum()
    assert inflated[plain].all()
    assert walled_grid.blocked_mask(0.6) is inflated


# ===================================================================
# Map text
# ===================================================================


def test_load_single_free_cell():
    grid = load_map("1 1 1 0 0\n.\n")
    assert (grid.width, grid.height) == (1, 1)
    assert query(grid, (0.5, 0.5)) == CellState.FREE


def test_load_map_row_length_mismatch():
    with pytest.raises(MapParseError) as exc_info:
        load_map("3 2 1 0 0\n...\n..\n")
    assert exc_info.value.line_number == 3


def test_load_map_unknown_symbol_and_row_count():
    with pytest.raises(MapParseError, match="unknown cell symbol"):
        load_map("2 1 1 0 0\n.x\n")
    with pytest.raises(MapParseError, match="expected 2 rows"):
        load_map("2 2 1 0 0\n..\n")
    with pytest.raises(MapParseError, match="line 1"):
        load_map("2 2 1\n..\n..\n")


def test_load_ring_map_counts_occupied_cells():
    rows = ["#" * 50] + ["#" + "." * 48 + "#" for _ in range(48)] + ["#" * 50]
    text = "50 50 1 0 0\n" + "\n".join(rows)
    grid = load_map(text)
    assert int((grid.cells == CellState.OCCUPIED).sum()) == text.count("#")
    assert query(grid, (0.5, 25.5)) == CellState.OCCUPIED
    assert query(grid, (25.5, 25.5)) == CellState.FREE


def test_first_row_is_minimum_y():
    grid = load_map("2 2 1 0 0\n#.\n..\n")
    assert query(grid, (0.5, 0.5)) == CellState.OCCUPIED
    assert query(grid, (0.5, 1.5)) == CellState.FREE


def test_dump_map_inverts_load():
    text = "3 2 0.5 -1 2\n.#?\n#..\n"
    assert dump_map(load_map(text)) == text


def test_query_outside_map_raises(open_grid):
    with pytest.raises(InputDomainError, match="outside the map"):
        query(open_grid, (11.0, 0.0))


def test_shipped_maps_load():
    from sat_planner.config import data_path  # pylint: disable=import-outside-toplevel

    for name in ("structured", "unstructured", "open"):
        grid = load_map(data_path("maps", f"{name}.map").read_text(encoding="utf-8"))
        assert (grid.width, grid.height) == (100, 100)
        assert grid.upper == (50.0, 50.0)
        assert grid.cells[0].min() == CellState.OCCUPIED


# ===================================================================
# Ray casting
# ===================================================================


def test_zero_length_ray_is_clear():
    assert raycast(_strip_grid(), (0.0, 0.0), (0.0, 0.0)) == CLEAR


def test_ray_over_empty_map_is_clear():
    assert not raycast(_strip_grid(), (0.0, 0.0), (5.0, 0.0)).blocked


def test_ray_blocked_at_cell_boundary():
    result = raycast(_strip_grid(occupied_i=2), (0.0, 0.0), (5.0, 0.0))
    assert result.blocked
    assert result.hit == pytest.approx((1.5, 0.0))


def test_endpoint_cells_never_block():
    grid = _strip_grid(occupied_i=0)
    assert not raycast(grid, (0.0, 0.0), (5.0, 0.0)).blocked
    grid = _strip_grid(occupied_i=5)
    assert not raycast(grid, (0.0, 0.0), (5.0, 0.0)).blocked


def test_unknown_cells_do_not_block():
    cells = np.zeros((1, 10), dtype=np.int8)
    cells[0, 2] = CellState.UNKNOWN
    grid = OccupancyGrid(cells, 1.0, (-0.5, -0.5))
    assert not raycast(grid, (0.0, 0.0), (5.0, 0.0)).blocked


def _random_grid(rng, occupied=0.2, size=20):
    occupied_mask = rng.random((size, size)) < occupied
    cells = np.where(occupied_mask, CellState.OCCUPIED, CellState.FREE).astype(np.int8)
    return OccupancyGrid(cells, 0.5, (0.0, 0.0))


def _sampled_cells(grid, start, end, samples=2001):
    """Cells hit by closely spaced points along the segment."""
    t = np.linspace(0.0, 1.0, samples)[:, None]
    points = np.asarray(start) + t * (np.asarray(end) - np.asarray(start))
    cells = np.floor((points - np.asarray(grid.origin)) / grid.resolution).astype(int)
    return set(map(tuple, np.unique(cells, axis=0).tolist()))


def test_raycast_agrees_with_sampled_line_of_sight(rng):
    for _ in range(20):
        grid = _random_grid(rng)
        for start, end in rng.uniform(0.01, 9.99, size=(25, 2, 2)):
            endpoints = {grid.cell_of(*start), grid.cell_of(*end)}
            touched = _sampled_cells(grid, start, end) - endpoints
            blocked = raycast(grid, tuple(start), tuple(end)).blocked
            if any(grid.state(i, j) == CellState.OCCUPIED for i, j in touched):
                assert blocked
            if blocked:
                near = {
                    (i + di, j + dj)
                    for i, j in touched | endpoints
                    for di in (-1, 0, 1)
                    for dj in (-1, 0, 1)
                    if 0 <= i + di < grid.width and 0 <= j + dj < grid.height
                }
                assert any(grid.state(i, j) == CellState.OCCUPIED for i, j in near - endpoints)


# ===================================================================
# Field of view
# ===================================================================


def test_point_straight_ahead_is_visible(open_grid):
    assert is_inside_fov(RobotPose(0, 0, 0), (5.0, 0.0), SensorConfig(), open_grid)


def test_point_behind_is_not_visible(open_grid):
    assert not is_inside_fov(RobotPose(0, 0, 0), (-5.0, 0.0), SensorConfig(), open_grid)


def test_point_beyond_range_is_not_visible():
    assert not is_inside_fov(RobotPose(0, 0, 0), (6.5, 0.0), SensorConfig(), None)


def test_cone_edge_is_inclusive():
    edge = (3.0 * math.cos(math.pi / 4), 3.0 * math.sin(math.pi / 4))
    assert is_inside_fov(RobotPose(0, 0, 0), edge, SensorConfig(), None)


def test_occluded_point_is_not_visible():
    grid = _strip_grid(occupied_i=2)
    assert not is_inside_fov(RobotPose(0, 0, 0), (5.0, 0.0), SensorConfig(), grid)


def test_out_of_map_point_is_not_visible(open_grid):
    pose = RobotPose(8.0, 0.0, 0.0)
    assert not is_inside_fov(pose, (11.0, 0.0), SensorConfig(), open_grid)
    assert is_inside_fov(pose, (11.0, 0.0), SensorConfig(), None)


def test_visible_mask_matches_pointwise_check(walled_grid, rng):
    pose = RobotPose(0.0, 0.5, 0.3)
    sensor = SensorConfig(max_range=8.0, half_angle=1.2)
    points = rng.uniform(-9.5, 9.5, size=(300, 2))
    mask = visible_mask(pose, points, sensor, walled_grid)
    expected = [is_inside_fov(pose, p, sensor, walled_grid) for p in points]
    assert mask.tolist() == expected


def test_shrinking_the_cone_never_adds_visible_points(walled_grid, rng):
    points = rng.uniform(-9.5, 9.5, size=(400, 2))
    for pose in (RobotPose(0.0, 0.5, 0.3), RobotPose(-4.0, -3.0, 2.0), RobotPose(5.0, 5.0, -2.5)):
        wide = visible_mask(pose, points, SensorConfig(max_range=9.0, half_angle=1.4), walled_grid)
        for max_range, half_angle in ((9.0, 0.7), (4.0, 1.4), (3.0, 0.2)):
            sensor = SensorConfig(max_range=max_range, half_angle=half_angle)
            narrow = visible_mask(pose, points, sensor, walled_grid)
            assert not (narrow & ~wide).any()


# ===================================================================
# Lidar mapping
# ===================================================================


def _unknown_like(grid):
    return OccupancyGrid.filled(grid.width, grid.height, grid.resolution, grid.origin, CellState.UNKNOWN)


def test_update_map_clears_cone(open_grid):
    lidar = SensorConfig(kind=SensorKind.LIDAR)
    known = update_map(_unknown_like(open_grid), RobotPose(0, 0, 0), lidar, open_grid)
    assert query(known, (3.0, 0.0)) == CellState.FREE
    assert query(known, (2.0, 1.5)) == CellState.FREE
    assert query(known, (-3.0, 0.0)) == CellState.UNKNOWN
    assert query(known, (0.0, -5.0)) == CellState.UNKNOWN


def test_update_map_is_idempotent(walled_grid):
    lidar = SensorConfig(kind=SensorKind.LIDAR)
    once = update_map(_unknown_like(walled_grid), RobotPose(0, 0, 0), lidar, walled_grid)
    twice = update_map(once, RobotPose(0, 0, 0), lidar, walled_grid)
    assert np.array_equal(once.cells, twice.cells)


def test_update_map_stops_at_wall(walled_grid):
    lidar = SensorConfig(kind=SensorKind.LIDAR)
    known = update_map(_unknown_like(walled_grid), RobotPose(0, 0, 0), lidar, walled_grid)
    assert query(known, (2.25, 0.0)) == CellState.OCCUPIED
    assert query(known, (1.0, 0.0)) == CellState.FREE
    assert query(known, (4.0, 0.0)) == CellState.UNKNOWN


def test_update_map_never_clears_occupied_cells(rng):
    lidar = SensorConfig(kind=SensorKind.LIDAR, max_range=5.0, half_angle=math.pi / 2)
    truth = _random_grid(rng, occupied=0.1)
    cells = np.full((truth.height, truth.width), CellState.UNKNOWN, dtype=np.int8)
    cells[rng.random(cells.shape) < 0.05] = CellState.OCCUPIED
    known = OccupancyGrid(cells, truth.resolution, truth.origin)
    headings = rng.uniform(-math.pi, math.pi, 40)
    poses = np.column_stack((rng.uniform(0.1, 9.9, size=(40, 2)), headings))
    for x, y, theta in poses:
        updated = update_map(known, RobotPose(x, y, theta), lidar, truth)
        was_occupied = known.cells == CellState.OCCUPIED
        assert np.all(updated.cells[was_occupied] == CellState.OCCUPIED)
        assert not np.any((updated.cells == CellState.FREE) & (truth.cells == CellState.OCCUPIED))
        known = updated


def test_update_map_requires_matching_geometry(open_grid):
    other = OccupancyGrid.filled(10, 10, 0.5)
    with pytest.raises(InputDomainError, match="geometry"):
        update_map(other, RobotPose(0, 0, 0), SensorConfig(), open_grid)


# ===================================================================
# Collision and path lengths
# ===================================================================


def test_motion_collides(open_grid, walled_grid):
    assert not motion_collides(open_grid, 0.3, (0.0, 0.0), (1.5, 0.0))
    assert motion_collides(walled_grid, 0.3, (0.0, 0.0), (3.0, 0.0))
    assert motion_collides(open_grid, 0.3, (9.0, 0.0), (10.5, 0.0))


def test_astar_straight_line(open_grid):
    assert astar_distance(open_grid, (0.1, 0.1), (5.1, 0.1), 0.3) == pytest.approx(5.0)


def test_astar_unreachable_behind_solid_wall(walled_grid):
    assert math.isinf(astar_distance(walled_grid, (0.0, 0.0), (5.0, 0.0), 0.3))


def test_astar_detours_through_doorway():
    cells = np.zeros((40, 40), dtype=np.int8)
    cells[:, 24] = CellState.OCCUPIED
    cells[36:, 24] = CellState.FREE
    grid = OccupancyGrid(cells, 0.5, (-10.0, -10.0))
    length = astar_distance(grid, (0.1, 0.1), (5.1, 0.1), 0.0)
    assert 5.0 < length < math.inf
    assert length > 2 * 7.5


def test_path_length_matrix_matches_astar(rng):
    cells = np.zeros((40, 40), dtype=np.int8)
    cells[5:35, 20] = CellState.OCCUPIED
    cells[20, 5:30] = CellState.OCCUPIED
    grid = OccupancyGrid(cells, 0.5, (0.0, 0.0))
    points = [tuple(p) for p in rng.uniform(0.5, 19.5, size=(5, 2))]
    matrix = path_length_matrix(grid, points, 0.3)
    for a, pa in enumerate(points):
        for b, pb in enumerate(points):
            assert matrix[a, b] == pytest.approx(astar_distance(grid, pa, pb, 0.3), abs=1e-9)
