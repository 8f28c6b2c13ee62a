# pylint: disable=too-few-public-methods
"""Typed configuration models and scenario loading.

Every tunable of the planner stack lives here as a frozen Pydantic model.
Defaults follow the simulation parameters the planner was tuned with
(500 particles, 100 tree nodes, 10/5 step horizons, 10 m coarse grid,
0.1 observation similarity threshold, v in [0, 3] m/s, w in [-pi/3, pi/3]
rad/s, 0.5 s sampling interval, 6 m / 90 degree sensors).

Scenario files are JSON documents whose keys map 1:1 onto
:class:`ScenarioConfig`; :func:`load_scenario` resolves the map path
relative to the scenario file and checks that it exists.
"""

import json
import math
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from sat_planner.errors import ScenarioError

# Range-bearing measurements are 2-D.
MEASUREMENT_DIM = 2


class _ConfigModel(BaseModel):
    """Base config for all models.

    ``extra="forbid"`` turns typos in scenario files into validation
    errors; ``frozen`` makes configs hashable values that can be shared
    across planner threads.
    """

    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        populate_by_name=True,
    )


# ── Sensors and motion ─────────────────────────────────────────────────


class SensorKind(str, Enum):
    """Which onboard sensor a :class:`SensorConfig` describes."""

    CAMERA = "camera"
    LIDAR = "lidar"


class SensorConfig(_ConfigModel):
    """Sensing cone: range limit and half of the opening angle."""

    max_range: float = Field(default=6.0, gt=0)
    half_angle: float = Field(default=math.pi / 4, gt=0, le=math.pi)
    kind: SensorKind = SensorKind.CAMERA


class MotionLimits(_ConfigModel):
    """Unicycle control bounds."""

    v_min: float = 0.0
    v_max: float = 3.0
    w_min: float = -math.pi / 3
    w_max: float = math.pi / 3

    @model_validator(mode="after")
    def _ordered(self) -> "MotionLimits":
        if self.v_min > self.v_max or self.w_min > self.w_max:
            raise ValueError("motion limits must satisfy min <= max")
        return self


def _check_spd(matrix: List[List[float]], name: str) -> List[List[float]]:
    arr = np.asarray(matrix, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if not np.allclose(arr, arr.T):
        raise ValueError(f"{name} must be symmetric")
    if np.any(np.linalg.eigvalsh(arr) <= 0):
        raise ValueError(f"{name} must be positive definite")
    return matrix


class NoiseConfig(_ConfigModel):
    """Process covariance Q (m^2) and measurement covariance Sigma.

    Sigma is ordered (range variance m^2, bearing variance rad^2).
    """

    process_cov: List[List[float]] = Field(
        default_factory=lambda: [[0.1, 0.0], [0.0, 0.1]]
    )
    measurement_cov: List[List[float]] = Field(
        default_factory=lambda: [[0.1, 0.0], [0.0, 0.01]]
    )

    @field_validator("process_cov")
    @classmethod
    def _q_spd(cls, value: List[List[float]]) -> List[List[float]]:
        if len(value) != 2:
            raise ValueError("process_cov must be 2x2")
        return _check_spd(value, "process_cov")

    @field_validator("measurement_cov")
    @classmethod
    def _sigma_spd(cls, value: List[List[float]]) -> List[List[float]]:
        if len(value) != MEASUREMENT_DIM:
            raise ValueError(f"measurement_cov must be {MEASUREMENT_DIM}x{MEASUREMENT_DIM}")
        return _check_spd(value, "measurement_cov")


# ── Estimation and planning ────────────────────────────────────────────


class FilterConfig(_ConfigModel):
    """Particle-filter schedule.

    ``resample_threshold`` is the ESS fraction of N below which the
    filter resamples. ``degenerate_recovery`` picks what happens when
    every particle is inconsistent with a measurement; with
    ``reseed_on_detection`` an unexplained detection instead redraws the
    particles around it.
    """

    resample_threshold: float = Field(default=0.5, gt=0, le=1)
    degenerate_recovery: Literal["outside_fov", "uniform"] = "outside_fov"
    reseed_on_detection: bool = False


class MiConfig(_ConfigModel):
    """Sigma-point MI reward settings.

    ``simplify_cell`` of 0 disables particle simplification;
    ``truncation_radius`` of ``inf`` disables truncation and ``"auto"``
    derives a 5-sigma radius from the measurement noise.
    """

    lam: float = 2.0
    simplify_cell: float = Field(default=0.0, ge=0)
    truncation_radius: Union[float, Literal["auto"]] = "auto"
    fold_process_noise: bool = False
    negative_floor: float = Field(default=0.02, ge=0)

    @model_validator(mode="after")
    def _valid_spread(self) -> "MiConfig":
        if self.lam + MEASUREMENT_DIM <= 0:
            raise ValueError("lam + m must be positive")
        if self.truncation_radius != "auto" and self.truncation_radius <= 0:
            raise ValueError("truncation_radius must be positive")
        return self


class HierarchyConfig(_ConfigModel):
    """Coarse (l_c) and fine (l_f) cell sides of the particle hierarchy."""

    l_c: float = Field(default=10.0, gt=0)
    l_f: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _coarser(self) -> "HierarchyConfig":
        if self.l_c <= self.l_f:
            raise ValueError("l_c must be larger than l_f")
        return self


def _default_primitives() -> List[Tuple[float, float]]:
    return [
        (v, w)
        for v in (0.0, 1.5, 3.0)
        for w in (-math.pi / 3, 0.0, math.pi / 3)
    ]


class PlannerConfig(_ConfigModel):
    """Belief tree search settings.

    ``d_thr=None`` resolves to half the smallest nonzero primitive
    displacement (see :meth:`resolved_d_thr`).
    """

    n_max: int = Field(default=100, ge=1)
    horizon: int = Field(default=10, ge=1)
    horizon_tracking: int = Field(default=5, ge=1)
    gamma: float = Field(default=0.95, gt=0, le=1)
    c_ucb: float = Field(default=math.sqrt(2), ge=0)
    d_thr: Optional[float] = Field(default=None, ge=0)
    o_thr: float = Field(default=0.1, ge=0)
    primitives: List[Tuple[float, float]] = Field(default_factory=_default_primitives)
    pw_k: float = Field(default=1.0, gt=0)
    pw_alpha: float = Field(default=0.5, gt=0)
    pw_fov_scaled: bool = False
    robot_radius: float = Field(default=0.3, ge=0)
    rollout_policy: Literal["goal", "random"] = "goal"
    recycling: bool = True
    max_iterations_factor: int = Field(default=10, ge=1)

    @field_validator("primitives")
    @classmethod
    def _nonempty(cls, value: List[Tuple[float, float]]) -> List[Tuple[float, float]]:
        if not value:
            raise ValueError("at least one motion primitive is required")
        return value

    def resolved_d_thr(self, dt: float) -> float:
        """Recycling distance, defaulting to half the smallest primitive step."""
        if self.d_thr is not None:
            return self.d_thr
        speeds = [abs(v) for v, _ in self.primitives if abs(v) > 0]
        if not speeds:
            return 0.0
        return 0.5 * min(speeds) * dt


# ── Scenario ───────────────────────────────────────────────────────────


class GmmComponentSpec(_ConfigModel):
    """One Gaussian component of the initial target belief."""

    mean: Tuple[float, float]
    cov: List[List[float]] = Field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    weight: float = Field(gt=0)

    @field_validator("cov")
    @classmethod
    def _cov_spd(cls, value: List[List[float]]) -> List[List[float]]:
        return _check_spd(value, "cov")


class TargetScript(_ConfigModel):
    """Ground-truth target: start point, waypoints, speed (m/s), jitter (m)."""

    start: Tuple[float, float]
    waypoints: List[Tuple[float, float]] = Field(default_factory=list)
    speed: float = Field(default=0.0, ge=0)
    jitter: float = Field(default=0.0, ge=0)


class AblationFlags(_ConfigModel):
    """Switches for the hierarchy and the rollout recycling."""

    hierarchy: bool = True
    recycling: bool = True


class ScenarioConfig(_ConfigModel):
    """A closed-loop search and tracking episode."""

    map_path: str = Field(alias="map")
    robot_start: Tuple[float, float, float]
    target: TargetScript
    initial_belief: List[GmmComponentSpec] = Field(min_length=1)
    n_particles: int = Field(default=500, ge=1)
    dt: float = Field(default=0.5, gt=0)
    limits: MotionLimits = Field(default_factory=MotionLimits)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    camera: SensorConfig = Field(default_factory=SensorConfig)
    lidar: SensorConfig = Field(
        default_factory=lambda: SensorConfig(kind=SensorKind.LIDAR)
    )
    filter: FilterConfig = Field(default_factory=FilterConfig)
    planner: PlannerConfig = Field(default_factory=PlannerConfig)
    hierarchy: HierarchyConfig = Field(default_factory=HierarchyConfig)
    mi: MiConfig = Field(default_factory=MiConfig)
    episode_steps: int = Field(default=200, ge=1)
    seed: int = 0
    ablation: AblationFlags = Field(default_factory=AblationFlags)
    known_map: bool = False

    @model_validator(mode="after")
    def _weights_sum_to_one(self) -> "ScenarioConfig":
        total = sum(c.weight for c in self.initial_belief)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"initial_belief weights must sum to 1 (got {total:.6f})")
        return self


# ── Loading ────────────────────────────────────────────────────────────


def data_path(*parts: str) -> Path:
    """Path of a file shipped under ``sat_planner/data``."""
    return Path(str(resources.files("sat_planner").joinpath("data", *parts)))


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Read and validate a scenario JSON file.

    The ``map`` entry is resolved relative to the scenario file. Raises
    :class:`ScenarioError` for unreadable files and missing maps; field
    problems surface as ``pydantic.ValidationError``.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ScenarioError(f"scenario file not found: {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"scenario {path} must be a JSON object")

    config = ScenarioConfig.model_validate(raw)
    map_path = Path(config.map_path)
    if not map_path.is_absolute():
        map_path = (path.parent / map_path).resolve()
    if not map_path.is_file():
        raise ScenarioError(f"map file not found: {map_path}")
    return config.model_copy(update={"map_path": str(map_path)})


__all__: Iterable[str] = (
    "MEASUREMENT_DIM",
    "SensorKind",
    "SensorConfig",
    "MotionLimits",
    "NoiseConfig",
    "FilterConfig",
    "MiConfig",
    "HierarchyConfig",
    "PlannerConfig",
    "GmmComponentSpec",
    "TargetScript",
    "AblationFlags",
    "ScenarioConfig",
    "data_path",
    "load_scenario",
)
