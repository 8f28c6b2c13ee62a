"""Particle hierarchy: coarse waypoints, goal selection and critical particles.

The full belief is summarised three ways per planning cycle:

* high-level particles, one per occupied coarse cell of side ``l_c``;
* the critical particles, i.e. the original particles of the coarse cell
  chosen as the next goal, re-normalised;
* the critical particles simplified on a fine grid of side ``l_f``, which
  is what the tree search plans over.

The goal is the first waypoint of the shortest open tour that starts at
the robot and visits every high-level particle, with obstacle-aware path
lengths on the known map.
"""

import logging
import math
from dataclasses import dataclass
from itertools import permutations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from sat_planner.belief import ParticleBelief, cluster_by_grid
from sat_planner.config import HierarchyConfig
from sat_planner.environment import OccupancyGrid, PoseLike, path_length_matrix
from sat_planner.errors import InputDomainError
from sat_planner.mi_reward import simplify_particles

logger = logging.getLogger(__name__)

# Largest waypoint count solved exactly.
EXACT_TSP_LIMIT = 10
_TWO_OPT_ROUNDS = 50

Point = Tuple[float, float]


@dataclass(frozen=True)
class Waypoint:
    """A high-level particle picked as goal."""

    index: int
    point: Point


@dataclass(frozen=True, eq=False)
class HierarchyOutput:
    """All layers of one hierarchy pass.

    ``goal_members`` indexes the original particles inside the goal's
    coarse cell.
    """

    high_level: ParticleBelief
    goal: Waypoint
    goal_members: NDArray[np.int64]
    critical: ParticleBelief
    simplified: ParticleBelief


def coarse_grid(
    b: ParticleBelief, l_c: float
) -> Tuple[ParticleBelief, Dict[Tuple[int, int], NDArray[np.int64]]]:
    """High-level particles and, per coarse cell, the indices of its members.

    The ``k``-th high-level particle belongs to the ``k``-th key of the
    returned mapping.
    """
    clusters = cluster_by_grid(b, l_c)
    membership = {
        (int(cell[0]), int(cell[1])): clusters.members(k)
        for k, cell in enumerate(clusters.cells)
    }
    return clusters.belief, membership


# ── Open path TSP ──────────────────────────────────────────────────────


def _held_karp_first(dist: NDArray[np.float64]) -> int:
    """First stop of the shortest open path from node 0 through all others.

    Returns an index into ``dist[1:]``.
    """
    n = len(dist) - 1
    full = (1 << n) - 1
    cost = np.full((1 << n, n), math.inf)
    parent = np.full((1 << n, n), -1, dtype=np.int64)
    for j in range(n):
        cost[1 << j, j] = dist[0, j + 1]
    hop = dist[1:, 1:]
    for mask in range(1, full + 1):
        members = [j for j in range(n) if mask >> j & 1]
        if len(members) < 2:
            continue
        for j in members:
            candidates = cost[mask ^ (1 << j)] + hop[:, j]
            best = int(np.argmin(candidates))
            cost[mask, j] = candidates[best]
            parent[mask, j] = best
    mask, j = full, int(np.argmin(cost[full]))
    while parent[mask, j] >= 0:
        mask, j = mask ^ (1 << j), int(parent[mask, j])
    return j


def _route_length(dist: NDArray[np.float64], route: Sequence[int]) -> float:
    stops = [0, *(r + 1 for r in route)]
    return float(sum(dist[a, b] for a, b in zip(stops, stops[1:])))


def _nearest_neighbour_two_opt_first(dist: NDArray[np.float64]) -> int:
    """Greedy tour from node 0 improved with 2-opt; returns its first stop."""
    n = len(dist) - 1
    remaining = set(range(n))
    route: List[int] = []
    here = 0
    while remaining:
        nxt = min(remaining, key=lambda k: (dist[here, k + 1], k))
        route.append(nxt)
        remaining.remove(nxt)
        here = nxt + 1

    for _ in range(_TWO_OPT_ROUNDS):
        improved = False
        for i in range(n - 1):
            for k in range(i + 1, n):
                before = 0 if i == 0 else route[i - 1] + 1
                first, last = route[i] + 1, route[k] + 1
                delta = dist[before, last] - dist[before, first]
                if k + 1 < n:
                    after = route[k + 1] + 1
                    delta += dist[first, after] - dist[last, after]
                if delta < -1e-12:
                    route[i : k + 1] = route[i : k + 1][::-1]
                    improved = True
        if not improved:
            break
    return route[0]


def shortest_route_first(dist: NDArray[np.float64]) -> int:
    """First waypoint of the optimal (or 2-opt) open tour from node 0."""
    n = len(dist) - 1
    if n < 1:
        raise InputDomainError("no waypoints to visit")
    if n == 1:
        return 0
    if n <= EXACT_TSP_LIMIT:
        return _held_karp_first(dist)
    return _nearest_neighbour_two_opt_first(dist)


def brute_force_route_first(dist: NDArray[np.float64]) -> int:
    """Enumerate every tour; only meant for a handful of waypoints."""
    n = len(dist) - 1
    best = min(permutations(range(n)), key=lambda route: (_route_length(dist, route), route))
    return best[0]


def find_goal(
    high_level: ParticleBelief,
    robot_pose: PoseLike,
    grid: Optional[OccupancyGrid],
    robot_radius: float = 0.3,
) -> Waypoint:
    """Next waypoint on the shortest tour through the high-level particles.

    Waypoints unreachable from the robot are left out with a warning; when
    none is reachable (or there is no map) straight-line distances are
    used. Zero-weight waypoints are never visited.
    """
    candidates = np.flatnonzero(high_level.weights > 0)
    if candidates.size == 0:
        raise InputDomainError("the high-level belief has no positive-weight waypoint")
    points = [(robot_pose.x, robot_pose.y)] + [
        (float(p[0]), float(p[1])) for p in high_level.states[candidates]
    ]

    dist: Optional[NDArray[np.float64]] = None
    if grid is not None:
        lengths = path_length_matrix(grid, points, robot_radius)
        reachable = np.isfinite(lengths[0, 1:])
        if not reachable.all():
            for k in candidates[~reachable]:
                logger.warning(
                    "Waypoint %d at (%.1f, %.1f) unreachable; left out of the tour",
                    k, high_level.states[k, 0], high_level.states[k, 1],
                )
        if reachable.any():
            keep = np.r_[True, reachable]
            dist = lengths[np.ix_(keep, keep)]
            candidates = candidates[reachable]
        else:
            logger.warning("No waypoint reachable; falling back to straight-line distances")
    if dist is None:
        coords = np.array(points)
        dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)

    chosen = int(candidates[shortest_route_first(dist)])
    return Waypoint(chosen, (float(high_level.states[chosen, 0]), float(high_level.states[chosen, 1])))


def particle_hierarchy(
    b: ParticleBelief,
    robot_pose: PoseLike,
    grid: Optional[OccupancyGrid],
    cfg: HierarchyConfig,
    robot_radius: float = 0.3,
) -> HierarchyOutput:
    """Coarse grid, goal, critical particles and their fine-grid simplification."""
    high_level, membership = coarse_grid(b, cfg.l_c)
    goal = find_goal(high_level, robot_pose, grid, robot_radius)
    members = list(membership.values())[goal.index]
    weights = b.weights[members]
    critical = ParticleBelief(b.states[members], weights / weights.sum())
    logger.debug(
        "Hierarchy: %d particles -> %d waypoints, goal %d with %d critical particles",
        b.n, high_level.n, goal.index, critical.n,
    )
    return HierarchyOutput(
        high_level=high_level,
        goal=goal,
        goal_members=members,
        critical=critical,
        simplified=simplify_particles(critical, cfg.l_f),
    )


__all__: Iterable[str] = (
    "EXACT_TSP_LIMIT",
    "Waypoint",
    "HierarchyOutput",
    "coarse_grid",
    "shortest_route_first",
    "brute_force_route_first",
    "find_goal",
    "particle_hierarchy",
)
