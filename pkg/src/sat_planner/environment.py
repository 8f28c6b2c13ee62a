"""Occupancy-grid world model, line of sight, sensing cones and lidar mapping.

Cells hold one of three states (:class:`CellState`). Row 0 of the cell
matrix is the minimum-y row; cell ``(i, j)`` covers
``[ox + i*res, ox + (i+1)*res) x [oy + j*res, oy + (j+1)*res)``.

Rays are traversed with an integer supercover walk: every cell the
segment touches is visited once, in order. Unknown cells never block a
ray. Occupied cells block rays but a ray is only *blocked* by cells lying
strictly between its start and end cells.

Angles are normalised to ``(-pi, pi]`` everywhere.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Dict, Iterable, Iterator, Optional, Protocol, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import dijkstra

from sat_planner.config import SensorConfig
from sat_planner.errors import InputDomainError, MapParseError

logger = logging.getLogger(__name__)

Point = Tuple[float, float]

_TWO_PI = 2.0 * math.pi
_ANGLE_EPS = 1e-12


class CellState(IntEnum):
    """Occupancy of one grid cell."""

    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


_CHAR_TO_STATE = {".": CellState.FREE, "#": CellState.OCCUPIED, "?": CellState.UNKNOWN}
_STATE_TO_CHAR = {int(state): char for char, state in _CHAR_TO_STATE.items()}


class PoseLike(Protocol):
    """Anything with a planar position and a heading."""

    @property
    def x(self) -> float: ...  # pylint: disable=missing-function-docstring

    @property
    def y(self) -> float: ...  # pylint: disable=missing-function-docstring

    @property
    def theta(self) -> float: ...  # pylint: disable=missing-function-docstring


def wrap_angle(angle: ArrayLike) -> Any:
    """Normalise angles to ``(-pi, pi]``; scalars stay scalars."""
    arr = np.asarray(angle, dtype=float)
    wrapped = np.mod(arr + math.pi, _TWO_PI) - math.pi
    wrapped = np.where(wrapped <= -math.pi, wrapped + _TWO_PI, wrapped)
    if wrapped.ndim == 0:
        return float(wrapped)
    return wrapped


# ── Grid ───────────────────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Immutable occupancy grid.

    ``cells`` has shape ``(height, width)``; it is copied and frozen on
    construction so a grid can be shared read-only between planners.
    """

    cells: NDArray[np.int8]
    resolution: float
    origin: Point = (0.0, 0.0)
    _cache: Dict[Any, Any] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        cells = np.array(self.cells, dtype=np.int8)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise InputDomainError("grid needs at least one row and one column")
        if not self.resolution > 0:
            raise InputDomainError("grid resolution must be positive")
        if not np.isin(cells, [int(s) for s in CellState]).all():
            raise InputDomainError("grid cells must be FREE, OCCUPIED or UNKNOWN")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def filled(
        cls,
        width: int,
        height: int,
        resolution: float,
        origin: Point = (0.0, 0.0),
        state: CellState = CellState.FREE,
    ) -> "OccupancyGrid":
        """Grid of the given size with every cell in ``state``."""
        if width < 1 or height < 1:
            raise InputDomainError("grid needs at least one row and one column")
        return cls(np.full((height, width), int(state), dtype=np.int8), resolution, origin)

    @property
    def width(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height(self) -> int:
        return int(self.cells.shape[0])

    @property
    def upper(self) -> Point:
        """World coordinates of the far corner (exclusive)."""
        return (
            self.origin[0] + self.width * self.resolution,
            self.origin[1] + self.height * self.resolution,
        )

    def same_geometry(self, other: "OccupancyGrid") -> bool:
        return (
            self.cells.shape == other.cells.shape
            and math.isclose(self.resolution, other.resolution)
            and np.allclose(self.origin, other.origin)
        )

    def contains(self, x: float, y: float) -> bool:
        upper = self.upper
        return self.origin[0] <= x < upper[0] and self.origin[1] <= y < upper[1]

    def contains_many(self, points: NDArray[np.float64]) -> NDArray[np.bool_]:
        upper = self.upper
        return (
            (points[:, 0] >= self.origin[0])
            & (points[:, 0] < upper[0])
            & (points[:, 1] >= self.origin[1])
            & (points[:, 1] < upper[1])
        )

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        """Column/row index ``(i, j)`` of the cell containing a world point."""
        return (
            int(math.floor((x - self.origin[0]) / self.resolution)),
            int(math.floor((y - self.origin[1]) / self.resolution)),
        )

    def cell_center(self, i: int, j: int) -> Point:
        return (
            self.origin[0] + (i + 0.5) * self.resolution,
            self.origin[1] + (j + 0.5) * self.resolution,
        )

    def state(self, i: int, j: int) -> CellState:
        return CellState(int(self.cells[j, i]))

    def with_cells(self, cells: NDArray[np.int8]) -> "OccupancyGrid":
        """Same geometry, new cell contents."""
        if cells.shape != self.cells.shape:
            raise InputDomainError("cell matrix shape does not match the grid")
        return OccupancyGrid(cells, self.resolution, self.origin)

    def blocked_mask(self, radius: float) -> NDArray[np.bool_]:
        """Occupied cells dilated by a disc of ``radius`` meters (cached)."""
        key = ("blocked", round(radius, 9))
        if key not in self._cache:
            blocked = self.cells == CellState.OCCUPIED
            reach = int(math.ceil(radius / self.resolution))
            if reach > 0 and blocked.any():
                yy, xx = np.mgrid[-reach : reach + 1, -reach : reach + 1]
                disc = (xx**2 + yy**2) * self.resolution**2 <= (
                    radius + 0.5 * self.resolution
                ) ** 2
                blocked = ndimage.binary_dilation(blocked, structure=disc)
            blocked.setflags(write=False)
            self._cache[key] = blocked
        return self._cache[key]  # type: ignore[no-any-return]

    def _require_inside(self, point: Sequence[float], name: str) -> None:
        if not self.contains(point[0], point[1]):
            raise InputDomainError(
                f"{name} ({point[0]:.3f}, {point[1]:.3f}) lies outside the map"
            )


# ── Map text ───────────────────────────────────────────────────────────


def load_map(text: str) -> OccupancyGrid:
    """Parse map text: a ``W H RES OX OY`` header, then H rows of W cells.

    The first row after the header is row 0 (minimum y). Trailing blank
    lines are ignored.
    """
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapParseError("empty map text", 1)

    header = lines[0].split()
    if len(header) != 5:
        raise MapParseError("header must be 'W H RES OX OY'", 1)
    try:
        width, height = int(header[0]), int(header[1])
        resolution, ox, oy = float(header[2]), float(header[3]), float(header[4])
    except ValueError as exc:
        raise MapParseError(f"malformed header: {exc}", 1) from exc
    if width < 1 or height < 1 or not resolution > 0:
        raise MapParseError("width, height and resolution must be positive", 1)

    rows = lines[1:]
    if len(rows) != height:
        line = len(lines) + 1 if len(rows) < height else height + 2
        raise MapParseError(f"expected {height} rows, found {len(rows)}", line)

    cells = np.empty((height, width), dtype=np.int8)
    for j, row in enumerate(rows):
        row = row.rstrip("\r")
        line_number = j + 2
        if len(row) != width:
            raise MapParseError(
                f"row has {len(row)} cells, expected {width}", line_number
            )
        for i, char in enumerate(row):
            state = _CHAR_TO_STATE.get(char)
            if state is None:
                raise MapParseError(f"unknown cell symbol {char!r}", line_number)
            cells[j, i] = state
    return OccupancyGrid(cells, resolution, (ox, oy))


def dump_map(grid: OccupancyGrid) -> str:
    """Inverse of :func:`load_map`."""
    header = (
        f"{grid.width} {grid.height} {grid.resolution:g} "
        f"{grid.origin[0]:g} {grid.origin[1]:g}"
    )
    rows = ["".join(_STATE_TO_CHAR[int(c)] for c in row) for row in grid.cells]
    return "\n".join([header, *rows]) + "\n"


def query(grid: OccupancyGrid, point: Sequence[float]) -> CellState:
    """State of the cell containing ``point``."""
    grid._require_inside(point, "point")  # pylint: disable=protected-access
    i, j = grid.cell_of(point[0], point[1])
    return grid.state(i, j)


# ── Ray traversal ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class RaycastResult:
    """Outcome of :func:`raycast`; ``hit`` is the entry point of the blocking cell."""

    blocked: bool
    hit: Optional[Point] = None


CLEAR = RaycastResult(False, None)


def _supercover(
    grid: OccupancyGrid, start: Sequence[float], end: Sequence[float]
) -> Iterator[Tuple[int, int, float]]:
    """Yield ``(i, j, t)`` for every cell the segment touches.

    ``t`` in [0, 1] is the segment parameter where the cell is entered.
    Both endpoints must lie inside the grid.
    """
    res = grid.resolution
    x0 = (start[0] - grid.origin[0]) / res
    y0 = (start[1] - grid.origin[1]) / res
    x1 = (end[0] - grid.origin[0]) / res
    y1 = (end[1] - grid.origin[1]) / res
    i, j = int(math.floor(x0)), int(math.floor(y0))
    i_end, j_end = int(math.floor(x1)), int(math.floor(y1))
    dx, dy = x1 - x0, y1 - y0

    step_i = int(dx > 0) - int(dx < 0)
    step_j = int(dy > 0) - int(dy < 0)
    if dx > 0:
        t_max_x, t_delta_x = (i + 1 - x0) / dx, 1.0 / dx
    elif dx < 0:
        t_max_x, t_delta_x = (x0 - i) / -dx, -1.0 / dx
    else:
        t_max_x = t_delta_x = math.inf
    if dy > 0:
        t_max_y, t_delta_y = (j + 1 - y0) / dy, 1.0 / dy
    elif dy < 0:
        t_max_y, t_delta_y = (y0 - j) / -dy, -1.0 / dy
    else:
        t_max_y = t_delta_y = math.inf

    yield i, j, 0.0
    for _ in range(abs(i_end - i) + abs(j_end - j)):
        if j == j_end or (i != i_end and t_max_x <= t_max_y):
            t = t_max_x
            t_max_x += t_delta_x
            i += step_i
        else:
            t = t_max_y
            t_max_y += t_delta_y
            j += step_j
        yield i, j, min(max(t, 0.0), 1.0)


def raycast(
    grid: OccupancyGrid, start: Sequence[float], end: Sequence[float]
) -> RaycastResult:
    """Line of sight from ``start`` to ``end``.

    Blocked iff an Occupied cell lies strictly between the two endpoint
    cells along the supercover walk.
    """
    grid._require_inside(start, "ray start")  # pylint: disable=protected-access
    grid._require_inside(end, "ray end")  # pylint: disable=protected-access
    end_cell = grid.cell_of(end[0], end[1])
    walk = _supercover(grid, start, end)
    next(walk)
    for i, j, t in walk:
        if (i, j) == end_cell:
            break
        if grid.cells[j, i] == CellState.OCCUPIED:
            return RaycastResult(
                True,
                (start[0] + t * (end[0] - start[0]), start[1] + t * (end[1] - start[1])),
            )
    return CLEAR


def _occluded_batch(
    grid: OccupancyGrid, start: Sequence[float], ends: NDArray[np.float64]
) -> NDArray[np.bool_]:
    """Vectorised :func:`raycast`: one start, many in-bounds ends."""
    res = grid.resolution
    x0 = (start[0] - grid.origin[0]) / res
    y0 = (start[1] - grid.origin[1]) / res
    x1 = (ends[:, 0] - grid.origin[0]) / res
    y1 = (ends[:, 1] - grid.origin[1]) / res
    i0, j0 = int(math.floor(x0)), int(math.floor(y0))
    i_end = np.floor(x1).astype(np.int64)
    j_end = np.floor(y1).astype(np.int64)
    dx, dy = x1 - x0, y1 - y0

    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta_x = np.where(dx != 0, 1.0 / np.abs(dx), np.inf)
        t_delta_y = np.where(dy != 0, 1.0 / np.abs(dy), np.inf)
        t_max_x = np.where(
            dx > 0, (i0 + 1 - x0) / dx, np.where(dx < 0, (x0 - i0) / -dx, np.inf)
        )
        t_max_y = np.where(
            dy > 0, (j0 + 1 - y0) / dy, np.where(dy < 0, (y0 - j0) / -dy, np.inf)
        )
    step_i = np.sign(dx).astype(np.int64)
    step_j = np.sign(dy).astype(np.int64)

    i = np.full(len(ends), i0, dtype=np.int64)
    j = np.full(len(ends), j0, dtype=np.int64)
    remaining = np.abs(i_end - i0) + np.abs(j_end - j0)
    occupied = grid.cells == CellState.OCCUPIED
    occluded = np.zeros(len(ends), dtype=bool)

    for _ in range(int(remaining.max(initial=0))):
        active = remaining > 0
        go_x = active & ((j == j_end) | ((i != i_end) & (t_max_x <= t_max_y)))
        go_y = active & ~go_x
        i = np.where(go_x, i + step_i, i)
        t_max_x = np.where(go_x, t_max_x + t_delta_x, t_max_x)
        j = np.where(go_y, j + step_j, j)
        t_max_y = np.where(go_y, t_max_y + t_delta_y, t_max_y)
        remaining = remaining - active
        between = active & (remaining > 0)
        if between.any():
            occluded[between] |= occupied[j[between], i[between]]
    return occluded


# ── Field of view ──────────────────────────────────────────────────────


def _in_cone(
    pose: PoseLike, dx: ArrayLike, dy: ArrayLike, sensor: SensorConfig
) -> Any:
    dist = np.hypot(dx, dy)
    bearing = np.where(dist > 0, wrap_angle(np.arctan2(dy, dx) - pose.theta), 0.0)
    return (dist <= sensor.max_range) & (np.abs(bearing) <= sensor.half_angle + _ANGLE_EPS)


def is_inside_fov(
    pose: PoseLike,
    point: Sequence[float],
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
) -> bool:
    """Whether ``point`` is within range, inside the cone and in line of sight.

    The robot must lie inside the grid. Points outside the grid are never
    visible. ``grid=None`` skips occlusion entirely.
    """
    if grid is not None:
        grid._require_inside((pose.x, pose.y), "robot")  # pylint: disable=protected-access
    dx, dy = point[0] - pose.x, point[1] - pose.y
    if not bool(_in_cone(pose, dx, dy, sensor)):
        return False
    if grid is None:
        return True
    if not grid.contains(point[0], point[1]):
        return False
    return not raycast(grid, (pose.x, pose.y), point).blocked


def visible_mask(
    pose: PoseLike,
    points: NDArray[np.float64],
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
) -> NDArray[np.bool_]:
    """:func:`is_inside_fov` for an ``(N, 2)`` array of points."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    mask = np.asarray(
        _in_cone(pose, points[:, 0] - pose.x, points[:, 1] - pose.y, sensor), dtype=bool
    )
    if grid is None or not mask.any():
        return mask
    grid._require_inside((pose.x, pose.y), "robot")  # pylint: disable=protected-access
    mask &= grid.contains_many(points)
    candidates = np.flatnonzero(mask)
    if candidates.size:
        mask[candidates] = ~_occluded_batch(grid, (pose.x, pose.y), points[candidates])
    return mask


# ── Lidar mapping ──────────────────────────────────────────────────────


def _clip_to_grid(
    grid: OccupancyGrid, start: Sequence[float], end: Sequence[float]
) -> Point:
    """Shorten the segment so its end stays inside the grid."""
    upper = grid.upper
    margin = 1e-9 * grid.resolution
    t = 1.0
    for axis, (low, high) in enumerate(((grid.origin[0], upper[0]), (grid.origin[1], upper[1]))):
        delta = end[axis] - start[axis]
        if delta > 0:
            t = min(t, (high - margin - start[axis]) / delta)
        elif delta < 0:
            t = min(t, (low - start[axis]) / delta)
    t = max(t, 0.0)
    return (start[0] + t * (end[0] - start[0]), start[1] + t * (end[1] - start[1]))


def update_map(
    known: OccupancyGrid,
    pose: PoseLike,
    lidar: SensorConfig,
    truth: OccupancyGrid,
) -> OccupancyGrid:
    """Integrate one lidar sweep into the known map.

    A fan of rays spaced at most one cell apart at maximum range is cast
    through ``truth``. Cells before the first Occupied truth cell become
    Free, the hit cell becomes Occupied, everything else keeps its state.
    Known Occupied cells are never cleared.
    """
    if not known.same_geometry(truth):
        raise InputDomainError("known and truth maps differ in geometry")
    start = (pose.x, pose.y)
    truth._require_inside(start, "robot")  # pylint: disable=protected-access

    n_rays = max(2, int(math.ceil(2 * lidar.half_angle * lidar.max_range / known.resolution)) + 1)
    angles = pose.theta + np.linspace(-lidar.half_angle, lidar.half_angle, n_rays)
    cells = known.cells.copy()
    for angle in angles:
        end = _clip_to_grid(
            truth,
            start,
            (start[0] + lidar.max_range * math.cos(angle), start[1] + lidar.max_range * math.sin(angle)),
        )
        for i, j, _ in _supercover(truth, start, end):
            if truth.cells[j, i] == CellState.OCCUPIED:
                cells[j, i] = CellState.OCCUPIED
                break
            if cells[j, i] != CellState.OCCUPIED:
                cells[j, i] = CellState.FREE
    return known.with_cells(cells)


# ── Collision and path lengths ─────────────────────────────────────────


def motion_collides(
    grid: OccupancyGrid, radius: float, start: Sequence[float], end: Sequence[float]
) -> bool:
    """Whether a straight motion crosses an inflated obstacle or leaves the map.

    The start cell is exempt so a robot grazing an inflated wall can still
    move away from it.
    """
    if not grid.contains(end[0], end[1]):
        return True
    if not grid.contains(start[0], start[1]):
        return True
    blocked = grid.blocked_mask(radius)
    walk = _supercover(grid, start, end)
    next(walk)
    return any(blocked[j, i] for i, j, _ in walk)


_NEIGHBOURS = (
    (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1),
)


def _snap_cell(grid: OccupancyGrid, radius: float, point: Sequence[float]) -> Tuple[int, int]:
    """Cell of ``point`` clamped into the grid and moved off inflated obstacles."""
    i, j = grid.cell_of(point[0], point[1])
    i = min(max(i, 0), grid.width - 1)
    j = min(max(j, 0), grid.height - 1)
    blocked = grid.blocked_mask(radius)
    if not blocked[j, i] or blocked.all():
        return i, j
    key = ("nearest_free", round(radius, 9))
    if key not in grid._cache:  # pylint: disable=protected-access
        _, nearest = ndimage.distance_transform_edt(blocked, return_indices=True)
        grid._cache[key] = nearest  # pylint: disable=protected-access
    nearest = grid._cache[key]  # pylint: disable=protected-access
    return int(nearest[1][j, i]), int(nearest[0][j, i])


def astar_distance(
    grid: OccupancyGrid, start: Sequence[float], goal: Sequence[float], radius: float
) -> float:
    """Shortest 8-connected path length in meters, ``inf`` if unreachable.

    Free and Unknown cells are traversable, Occupied cells inflated by
    ``radius`` are not. Diagonal steps cost sqrt(2) cells and may not cut
    obstacle corners. Endpoints on inflated cells are moved to the nearest
    traversable cell.
    """
    blocked = grid.blocked_mask(radius)
    si, sj = _snap_cell(grid, radius, start)
    gi, gj = _snap_cell(grid, radius, goal)
    if (si, sj) == (gi, gj):
        return 0.0
    if blocked[sj, si] or blocked[gj, gi]:
        return math.inf

    res = grid.resolution
    best: Dict[Tuple[int, int], float] = {(si, sj): 0.0}
    frontier = [(math.hypot(gi - si, gj - sj), 0.0, si, sj)]
    while frontier:
        _, cost, i, j = heapq.heappop(frontier)
        if (i, j) == (gi, gj):
            return cost * res
        if cost > best.get((i, j), math.inf):
            continue
        for di, dj in _NEIGHBOURS:
            ni, nj = i + di, j + dj
            if not (0 <= ni < grid.width and 0 <= nj < grid.height) or blocked[nj, ni]:
                continue
            if di and dj and (blocked[j, ni] or blocked[nj, i]):
                continue
            new_cost = cost + (math.sqrt(2.0) if di and dj else 1.0)
            if new_cost < best.get((ni, nj), math.inf):
                best[(ni, nj)] = new_cost
                heapq.heappush(
                    frontier, (new_cost + math.hypot(gi - ni, gj - nj), new_cost, ni, nj)
                )
    return math.inf


def _grid_graph(grid: OccupancyGrid, radius: float) -> csr_matrix:
    """The A* neighbourhood as a sparse graph over cell ids ``j * W + i``."""
    key = ("graph", round(radius, 9))
    if key in grid._cache:  # pylint: disable=protected-access
        return grid._cache[key]  # type: ignore[no-any-return]  # pylint: disable=protected-access
    free = ~grid.blocked_mask(radius)
    height, width = free.shape
    ids = np.arange(height * width).reshape(height, width)
    rows, cols, weights = [], [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        j_lo, j_hi = max(0, -dj), height - max(0, dj)
        i_lo, i_hi = 0, width - di
        src = (slice(j_lo, j_hi), slice(i_lo, i_hi))
        dst = (slice(j_lo + dj, j_hi + dj), slice(i_lo + di, i_hi + di))
        ok = free[src] & free[dst]
        if di and dj:
            ok &= free[(slice(j_lo, j_hi), slice(i_lo + di, i_hi + di))]
            ok &= free[(slice(j_lo + dj, j_hi + dj), slice(i_lo, i_hi))]
        rows.append(ids[src][ok])
        cols.append(ids[dst][ok])
        weights.append(np.full(int(ok.sum()), math.sqrt(2.0) if di and dj else 1.0))
    graph = coo_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
        shape=(height * width, height * width),
    ).tocsr()
    grid._cache[key] = graph  # pylint: disable=protected-access
    return graph


def path_length_matrix(
    grid: OccupancyGrid, points: Sequence[Sequence[float]], radius: float
) -> NDArray[np.float64]:
    """Pairwise shortest path lengths (meters) between ``points``.

    Same graph and costs as :func:`astar_distance`; computed with one
    Dijkstra sweep per point, so it scales to many waypoints.
    """
    cells = [_snap_cell(grid, radius, p) for p in points]
    ids = np.array([j * grid.width + i for i, j in cells], dtype=np.int64)
    dist = dijkstra(_grid_graph(grid, radius), directed=False, indices=ids)
    return np.asarray(dist[:, ids], dtype=float) * grid.resolution


__all__: Iterable[str] = (
    "CellState",
    "OccupancyGrid",
    "RaycastResult",
    "CLEAR",
    "wrap_angle",
    "load_map",
    "dump_map",
    "query",
    "raycast",
    "is_inside_fov",
    "visible_mask",
    "update_map",
    "motion_collides",
    "astar_distance",
    "path_length_matrix",
)
