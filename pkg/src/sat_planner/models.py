"""Robot and target dynamics and the intermittent range-bearing sensor.

The robot follows a unicycle model. The true target dynamics are not
known to the estimator, which assumes a random walk driven by process
noise Q. A detection is a noisy (range, bearing) pair; when the target is
outside the field of view the sensor returns :data:`EMPTY`.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.stats import multivariate_normal

from sat_planner.config import MotionLimits, NoiseConfig, SensorConfig
from sat_planner.environment import OccupancyGrid, PoseLike, visible_mask, wrap_angle
from sat_planner.errors import InputDomainError, NumericDomainError

_LIMIT_TOL = 1e-9


# ── Value types ────────────────────────────────────────────────────────


@dataclass(frozen=True)
class RobotPose:
    """Planar robot pose; ``theta`` is normalised to ``(-pi, pi]``."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class RobotControl:
    """Linear (m/s) and angular (rad/s) velocity."""

    v: float
    w: float


@dataclass(frozen=True)
class TargetState:
    """Target position in meters."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InputDomainError("target coordinates must be finite")

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.x, self.y], dtype=float)


def _as_spd(matrix: ArrayLike, name: str) -> NDArray[np.float64]:
    arr = np.array(matrix, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise NumericDomainError(f"{name} must be a square matrix")
    if not np.allclose(arr, arr.T, rtol=1e-10, atol=1e-14):
        raise NumericDomainError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(arr)
    except np.linalg.LinAlgError as exc:
        raise NumericDomainError(f"{name} must be positive definite") from exc
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Process covariance ``Q`` (2x2) and measurement covariance ``Sigma`` (m x m)."""

    Q: NDArray[np.float64]
    Sigma: NDArray[np.float64]

    def __post_init__(self) -> None:
        object.__setattr__(self, "Q", _as_spd(self.Q, "Q"))
        object.__setattr__(self, "Sigma", _as_spd(self.Sigma, "Sigma"))
        if self.Q.shape != (2, 2):
            raise NumericDomainError("Q must be 2x2")

    @classmethod
    def from_config(cls, config: NoiseConfig) -> "NoiseModel":
        return cls(np.array(config.process_cov), np.array(config.measurement_cov))

    @cached_property
    def q_chol(self) -> NDArray[np.float64]:
        return np.linalg.cholesky(self.Q)

    @cached_property
    def sigma_chol(self) -> NDArray[np.float64]:
        return np.linalg.cholesky(self.Sigma)


@dataclass(frozen=True)
class Detection:
    """A target detection: range (m) and bearing (rad) relative to the heading."""

    range: float
    bearing: float

    def __post_init__(self) -> None:
        if self.range < 0:
            raise InputDomainError("detection range must be non-negative")
        object.__setattr__(self, "range", float(self.range))
        object.__setattr__(self, "bearing", wrap_angle(self.bearing))

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.range, self.bearing])


@dataclass(frozen=True)
class Empty:
    """No detection (target outside the field of view)."""


EMPTY = Empty()

Measurement = Union[Detection, Empty]


@dataclass(frozen=True)
class SystemModel:
    """Everything the estimator and planner assume about the world."""

    dt: float = 0.5
    limits: MotionLimits = field(default_factory=MotionLimits)
    noise: NoiseModel = field(
        default_factory=lambda: NoiseModel.from_config(NoiseConfig())
    )
    target_model: str = "random_walk"


# ── Dynamics ───────────────────────────────────────────────────────────


def check_control(u: RobotControl, limits: MotionLimits) -> None:
    """Raise :class:`InputDomainError` if ``u`` violates ``limits``."""
    if not (
        limits.v_min - _LIMIT_TOL <= u.v <= limits.v_max + _LIMIT_TOL
        and limits.w_min - _LIMIT_TOL <= u.w <= limits.w_max + _LIMIT_TOL
    ):
        raise InputDomainError(
            f"control (v={u.v:.3f}, w={u.w:.3f}) outside limits "
            f"v in [{limits.v_min}, {limits.v_max}], w in [{limits.w_min:.3f}, {limits.w_max:.3f}]"
        )


def step_robot(
    pose: RobotPose,
    u: RobotControl,
    dt: float,
    limits: Optional[MotionLimits] = None,
) -> RobotPose:
    """Advance the unicycle by one Euler step of length ``dt``."""
    if not dt > 0:
        raise InputDomainError("dt must be positive")
    if limits is not None:
        check_control(u, limits)
    return RobotPose(
        pose.x + u.v * math.cos(pose.theta) * dt,
        pose.y + u.v * math.sin(pose.theta) * dt,
        pose.theta + u.w * dt,
    )


def assumed_target_dynamics(states: NDArray[np.float64]) -> NDArray[np.float64]:
    """Mean of the estimator's target model (random walk: identity)."""
    return np.array(states, dtype=float, copy=True)


def step_target_model(
    s: TargetState, Q: ArrayLike, rng: np.random.Generator
) -> TargetState:
    """Sample the next target state from the assumed model plus N(0, Q)."""
    try:
        chol = np.linalg.cholesky(np.asarray(Q, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NumericDomainError("Q must be positive definite") from exc
    mean = assumed_target_dynamics(s.as_array())
    sample = mean + chol @ rng.standard_normal(2)
    return TargetState(float(sample[0]), float(sample[1]))


# ── Observation model ──────────────────────────────────────────────────


def measurement_function(
    pose: PoseLike, targets: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Noiseless (range, bearing) of each row of an ``(N, 2)`` target array."""
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    dx = targets[:, 0] - pose.x
    dy = targets[:, 1] - pose.y
    return np.column_stack(
        (np.hypot(dx, dy), wrap_angle(np.arctan2(dy, dx) - pose.theta))
    )


def observe(
    pose: PoseLike,
    target: TargetState,
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
    Sigma: ArrayLike,
    rng: np.random.Generator,
) -> Measurement:
    """Simulate one camera reading of the true target."""
    point = target.as_array()
    if not visible_mask(pose, point[None, :], sensor, grid)[0]:
        return EMPTY
    try:
        chol = np.linalg.cholesky(np.asarray(Sigma, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NumericDomainError("Sigma must be positive definite") from exc
    z = measurement_function(pose, point)[0] + chol @ rng.standard_normal(chol.shape[0])
    return Detection(max(float(z[0]), 0.0), float(z[1]))


def measurement_residuals(
    z: Detection, predicted: NDArray[np.float64]
) -> NDArray[np.float64]:
    """``z - h`` row-wise with the bearing difference wrapped."""
    return np.column_stack(
        (z.range - predicted[:, 0], wrap_angle(z.bearing - predicted[:, 1]))
    )


def obs_log_likelihoods(
    z: Measurement,
    targets: NDArray[np.float64],
    pose: PoseLike,
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
    Sigma: ArrayLike,
) -> NDArray[np.float64]:
    """log P(z | target) for each row of ``targets`` (``-inf`` where impossible)."""
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    inside = visible_mask(pose, targets, sensor, grid)
    if isinstance(z, Empty):
        return np.where(inside, -np.inf, 0.0)
    out = np.full(len(targets), -np.inf)
    if inside.any():
        residuals = measurement_residuals(z, measurement_function(pose, targets[inside]))
        out[inside] = np.atleast_1d(
            multivariate_normal.logpdf(residuals, mean=np.zeros(2), cov=np.asarray(Sigma))
        )
    return out


def obs_log_likelihood(
    z: Measurement,
    target: TargetState,
    pose: PoseLike,
    sensor: SensorConfig,
    grid: Optional[OccupancyGrid],
    Sigma: ArrayLike,
) -> float:
    """log P(z | target); 0 for an expected miss, ``-inf`` for an impossible event."""
    return float(
        obs_log_likelihoods(z, target.as_array()[None, :], pose, sensor, grid, Sigma)[0]
    )


__all__: Iterable[str] = (
    "RobotPose",
    "RobotControl",
    "TargetState",
    "NoiseModel",
    "Detection",
    "Empty",
    "EMPTY",
    "Measurement",
    "SystemModel",
    "check_control",
    "step_robot",
    "assumed_target_dynamics",
    "step_target_model",
    "measurement_function",
    "measurement_residuals",
    "observe",
    "obs_log_likelihoods",
    "obs_log_likelihood",
)
