"""Particle-filter belief over the target position.

A :class:`ParticleBelief` is an immutable value: every operation returns a
new belief and never touches its input, so planners can hand beliefs to
tree nodes without copying.

Weights are combined in log space and normalised with a max-shifted
log-sum-exp, which keeps 500-particle posteriors from underflowing.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from sat_planner.config import GmmComponentSpec, SensorConfig
from sat_planner.environment import CellState, OccupancyGrid, PoseLike, visible_mask
from sat_planner.errors import DegeneratePosteriorError, InputDomainError, NumericDomainError
from sat_planner.models import (
    Detection,
    Measurement,
    RobotPose,
    TargetState,
    assumed_target_dynamics,
    obs_log_likelihoods,
)

logger = logging.getLogger(__name__)

_WEIGHT_TOL = 1e-9
_MAX_REDRAWS = 100


@dataclass(frozen=True, eq=False)
class ParticleBelief:
    """``N`` weighted target hypotheses.

    ``states`` has shape ``(N, 2)`` and ``weights`` shape ``(N,)``; both
    are read-only copies. Weights are non-negative and sum to one.
    """

    states: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=float).reshape(-1, 2)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if len(states) < 1:
            raise InputDomainError("a belief needs at least one particle")
        if len(weights) != len(states):
            raise InputDomainError(
                f"{len(weights)} weights for {len(states)} particles"
            )
        if not np.isfinite(states).all():
            raise InputDomainError("particle states must be finite")
        if not np.isfinite(weights).all() or (weights < 0).any():
            raise InputDomainError("particle weights must be finite and non-negative")
        total = weights.sum()
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise InputDomainError(f"particle weights sum to {total:.12f}, not 1")
        states.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, states: ArrayLike) -> "ParticleBelief":
        states = np.asarray(states, dtype=float).reshape(-1, 2)
        if len(states) < 1:
            raise InputDomainError("a belief needs at least one particle")
        return cls(states, np.full(len(states), 1.0 / len(states)))

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])

    def with_weights(self, weights: NDArray[np.float64]) -> "ParticleBelief":
        return ParticleBelief(self.states, weights)


@dataclass(frozen=True, eq=False)
class JointBeliefState:
    """Robot pose and target belief: the state of the belief MDP."""

    robot: RobotPose
    belief: ParticleBelief


@dataclass(frozen=True, eq=False)
class GridClusters:
    """Particles grouped by an axis-aligned grid anchored at the origin.

    ``belief`` holds one particle per occupied cell, at the weighted mean
    of its members and carrying their summed weight. ``labels[k]`` is the
    cluster of input particle ``k``; ``cells`` are the integer cell indices
    of each cluster, in lexicographic order.
    """

    belief: ParticleBelief
    labels: NDArray[np.int64]
    cells: NDArray[np.int64]

    def members(self, cluster: int) -> NDArray[np.int64]:
        return np.flatnonzero(self.labels == cluster)


# ── Filter steps ───────────────────────────────────────────────────────


def _cholesky(Q: ArrayLike) -> NDArray[np.float64]:
    try:
        return np.linalg.cholesky(np.asarray(Q, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NumericDomainError("Q must be positive definite") from exc


def _admissible(grid: OccupancyGrid, states: NDArray[np.float64]) -> NDArray[np.bool_]:
    """Inside the map and not on a known Occupied cell."""
    ok = grid.contains_many(states)
    if ok.any():
        idx = np.flatnonzero(ok)
        i = np.floor((states[idx, 0] - grid.origin[0]) / grid.resolution).astype(np.int64)
        j = np.floor((states[idx, 1] - grid.origin[1]) / grid.resolution).astype(np.int64)
        ok[idx] = grid.cells[j, i] != CellState.OCCUPIED
    return ok


def predict(
    b: ParticleBelief,
    Q: ArrayLike,
    rng: np.random.Generator,
    grid: Optional[OccupancyGrid] = None,
) -> ParticleBelief:
    """Propagate every particle through the assumed dynamics plus N(0, Q).

    With a ``grid``, a particle whose sample leaves the map or lands on a
    known Occupied cell keeps its previous state. Weights are unchanged.
    """
    chol = _cholesky(Q)
    moved = assumed_target_dynamics(b.states) + rng.standard_normal((b.n, 2)) @ chol.T
    if grid is not None:
        stay = ~_admissible(grid, moved)
        moved[stay] = b.states[stay]
    return ParticleBelief(moved, b.weights)


def _normalise_log(log_weights: NDArray[np.float64]) -> NDArray[np.float64]:
    total = logsumexp(log_weights)
    if not np.isfinite(total):
        raise DegeneratePosteriorError("every particle has zero posterior weight")
    weights = np.exp(log_weights - total)
    return weights / weights.sum()  # type: ignore[no-any-return]


def reweight(b: ParticleBelief, log_likelihoods: ArrayLike) -> ParticleBelief:
    """Multiply weights by ``exp(log_likelihoods)`` and renormalise."""
    log_likelihoods = np.asarray(log_likelihoods, dtype=float)
    if log_likelihoods.shape != b.weights.shape:
        raise InputDomainError("one log-likelihood per particle is required")
    with np.errstate(divide="ignore"):
        log_weights = np.log(b.weights) + log_likelihoods
    return b.with_weights(_normalise_log(log_weights))


def update(
    b: ParticleBelief,
    z: Measurement,
    pose: PoseLike,
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
    Sigma: ArrayLike,
) -> ParticleBelief:
    """Bayes update with one camera measurement.

    Raises :class:`DegeneratePosteriorError` when no particle is
    consistent with ``z``.
    """
    return reweight(b, obs_log_likelihoods(z, b.states, pose, sensor, grid, Sigma))


def recover_degenerate(
    b: ParticleBelief,
    pose: PoseLike,
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
    policy: str = "outside_fov",
) -> ParticleBelief:
    """Uniform weights over the particles outside the current FOV.

    Falls back to a full uniform reset when every particle is inside, or
    when ``policy`` is ``"uniform"``.
    """
    if policy == "outside_fov":
        outside = ~visible_mask(pose, b.states, sensor, grid)
        if outside.any():
            return b.with_weights(outside / outside.sum())
    elif policy != "uniform":
        raise InputDomainError(f"unknown recovery policy {policy!r}")
    return ParticleBelief.uniform(b.states)


def reseed_from_detection(
    b: ParticleBelief,
    z: Detection,
    pose: PoseLike,
    Sigma: ArrayLike,
    rng: np.random.Generator,
) -> ParticleBelief:
    """Redraw every particle from the inverted range-bearing sensor around ``z``."""
    noise = rng.standard_normal((b.n, 2)) @ np.linalg.cholesky(np.asarray(Sigma, dtype=float)).T
    ranges = np.maximum(z.range + noise[:, 0], 0.0)
    angles = pose.theta + z.bearing + noise[:, 1]
    states = np.column_stack(
        (pose.x + ranges * np.cos(angles), pose.y + ranges * np.sin(angles))
    )
    return ParticleBelief.uniform(states)


def update_with_recovery(  # pylint: disable=too-many-arguments,too-many-positional-arguments
    b: ParticleBelief,
    z: Measurement,
    pose: PoseLike,
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
    Sigma: ArrayLike,
    policy: str = "outside_fov",
    reseed_rng: Optional[np.random.Generator] = None,
) -> Tuple[ParticleBelief, bool]:
    """:func:`update`, applying the recovery policy on a degenerate posterior.

    Returns the new belief and whether recovery was needed. When
    ``reseed_rng`` is given, a detection nobody explains redraws the
    particles around the detection instead.
    """
    try:
        return update(b, z, pose, sensor, grid, Sigma), False
    except DegeneratePosteriorError:
        if reseed_rng is not None and isinstance(z, Detection):
            logger.warning(
                "Detection (%.2f m, %.2f rad) unexplained by belief; reseeding %d particles",
                z.range, z.bearing, b.n,
            )
            return reseed_from_detection(b, z, pose, Sigma, reseed_rng), True
        logger.warning(
            "Degenerate posterior for %s measurement; applying %s recovery",
            "empty" if not isinstance(z, Detection) else "detection", policy,
        )
        return recover_degenerate(b, pose, sensor, grid, policy), True


# ── Resampling ─────────────────────────────────────────────────────────


def systematic_indices(weights: ArrayLike, offset: float) -> NDArray[np.int64]:
    """Particle index picked by each of the N comb positions ``offset + k/N``.

    ``offset`` must lie in ``[0, 1/N)``.
    """
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    positions = offset + np.arange(n) / n
    return np.minimum(np.searchsorted(cumulative, positions, side="right"), n - 1)


def resample_low_variance(b: ParticleBelief, rng: np.random.Generator) -> ParticleBelief:
    """Systematic resampling with a single random offset."""
    idx = systematic_indices(b.weights, rng.uniform(0.0, 1.0 / b.n))
    return ParticleBelief.uniform(b.states[idx])


def ess(b: ParticleBelief) -> float:
    """Effective sample size ``1 / sum(w^2)``."""
    return float(1.0 / np.sum(b.weights**2))


def should_resample(b: ParticleBelief, threshold: float) -> bool:
    return ess(b) < threshold * b.n


def mean_estimate(b: ParticleBelief) -> TargetState:
    mean = b.weights @ b.states
    return TargetState(float(mean[0]), float(mean[1]))


def covariance_estimate(b: ParticleBelief) -> NDArray[np.float64]:
    """Weighted (biased) covariance of the particle cloud."""
    centred = b.states - b.weights @ b.states
    return (centred * b.weights[:, None]).T @ centred  # type: ignore[no-any-return]


# ── Construction and clustering ────────────────────────────────────────


def sample_gmm_belief(
    components: Sequence[GmmComponentSpec],
    n: int,
    rng: np.random.Generator,
    grid: Optional[OccupancyGrid] = None,
) -> ParticleBelief:
    """Draw ``n`` equally weighted particles from a Gaussian mixture.

    With a ``grid``, draws off the map or on known Occupied cells are
    redrawn; after repeated failures they are clamped into the map.
    """
    if n < 1:
        raise InputDomainError("n must be at least 1")
    if not components:
        raise InputDomainError("at least one mixture component is required")
    probs = np.array([c.weight for c in components], dtype=float)
    probs /= probs.sum()
    means = np.array([c.mean for c in components], dtype=float)
    chols = np.array([np.linalg.cholesky(np.asarray(c.cov, dtype=float)) for c in components])

    def draw(count: int) -> NDArray[np.float64]:
        picks = rng.choice(len(components), size=count, p=probs)
        eps = rng.standard_normal((count, 2))
        return means[picks] + np.einsum("nij,nj->ni", chols[picks], eps)  # type: ignore[no-any-return]

    states = draw(n)
    if grid is not None:
        for _ in range(_MAX_REDRAWS):
            bad = ~_admissible(grid, states)
            if not bad.any():
                break
            states[bad] = draw(int(bad.sum()))
        upper = np.array(grid.upper) - 1e-6 * grid.resolution
        states = np.clip(states, np.array(grid.origin), upper)
    return ParticleBelief.uniform(states)


def cluster_by_grid(b: ParticleBelief, cell: float) -> GridClusters:
    """Group particles into square cells of side ``cell``.

    Clusters whose members all have zero weight sit at the plain mean of
    their members with weight zero.
    """
    if not cell > 0:
        raise InputDomainError("cell size must be positive")
    keys = np.floor(b.states / cell).astype(np.int64)
    cells, labels = np.unique(keys, axis=0, return_inverse=True)
    labels = np.asarray(labels).reshape(-1)
    k = len(cells)
    mass = np.bincount(labels, weights=b.weights, minlength=k)
    counts = np.bincount(labels, minlength=k).astype(float)
    weighted = np.column_stack(
        [np.bincount(labels, weights=b.weights * b.states[:, d], minlength=k) for d in range(2)]
    )
    plain = np.column_stack(
        [np.bincount(labels, weights=b.states[:, d], minlength=k) for d in range(2)]
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        centres = np.where(
            (mass > 0)[:, None], weighted / mass[:, None], plain / counts[:, None]
        )
    return GridClusters(ParticleBelief(centres, mass / mass.sum()), labels, cells)


__all__: Iterable[str] = (
    "ParticleBelief",
    "JointBeliefState",
    "GridClusters",
    "predict",
    "reweight",
    "update",
    "recover_degenerate",
    "reseed_from_detection",
    "update_with_recovery",
    "systematic_indices",
    "resample_low_variance",
    "ess",
    "should_resample",
    "mean_estimate",
    "covariance_estimate",
    "sample_gmm_belief",
    "cluster_by_grid",
)
