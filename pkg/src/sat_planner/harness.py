"""Closed-loop episodes, ablation runs and the MI benchmark.

Every episode draws three independent random streams from its seed
(world, filter and planner), so repeated runs with one seed are
identical. Wall-clock planning times are reported separately from the
metrics, which stay byte-reproducible.
"""

import csv
import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from sat_planner.belief import (
    JointBeliefState,
    ParticleBelief,
    mean_estimate,
    predict,
    resample_low_variance,
    sample_gmm_belief,
    should_resample,
    update_with_recovery,
)
from sat_planner.config import (
    AblationFlags,
    MiConfig,
    ScenarioConfig,
    SensorConfig,
    TargetScript,
)
from sat_planner.environment import (
    CellState,
    OccupancyGrid,
    load_map,
    motion_collides,
    update_map,
)
from sat_planner.errors import InputDomainError, PlannerStuckError, ScenarioError
from sat_planner.hierarchy import particle_hierarchy
from sat_planner.mi_reward import (
    EntropyEstimate,
    gmm_from_particles,
    mc_entropy,
    simplify_particles,
    sp_entropy,
)
from sat_planner.models import (
    Detection,
    Measurement,
    NoiseModel,
    RobotControl,
    RobotPose,
    SystemModel,
    TargetState,
    observe,
    step_robot,
)
from sat_planner.rbts import PlanDiagnostics, PlanResult, build_tree, make_mi_reward, plan_greedy

logger = logging.getLogger(__name__)

METRICS_VERSION = 1

METRICS_COLUMNS: Tuple[str, ...] = (
    "metrics_version",
    "scenario",
    "variant",
    "seed",
    "steps",
    "steps_to_find",
    "t_s",
    "r_los",
    "eps_est",
    "tracking_steps",
    "lost_steps",
    "plan_cycles",
    "rollouts",
    "reuses",
    "degenerate_events",
    "stuck_events",
    "collisions",
)

TRAJECTORY_COLUMNS: Tuple[str, ...] = (
    "step",
    "robot_x",
    "robot_y",
    "robot_theta",
    "target_x",
    "target_y",
    "estimate_x",
    "estimate_y",
    "measurement",
    "range",
    "bearing",
    "stage",
    "horizon",
    "action_v",
    "action_w",
    "belief_nodes",
    "rollouts",
    "reuses",
    "recovered",
)

ABLATION_COLUMNS: Tuple[str, ...] = (
    "variant",
    "trials",
    "found",
    "steps_to_find_mean",
    "steps_to_find_std",
    "rollouts_mean",
    "reuses_mean",
)

ABLATION_TIMING_COLUMNS: Tuple[str, ...] = ("variant", "plan_time_mean", "plan_time_std")

BENCH_COLUMNS: Tuple[str, ...] = (
    "estimator",
    "sweep",
    "value",
    "entropy",
    "abs_error",
    "mc_stderr",
    "wall_ns",
)

VARIANTS: Dict[str, AblationFlags] = {
    "Van": AblationFlags(hierarchy=False, recycling=False),
    "Van+R": AblationFlags(hierarchy=False, recycling=True),
    "Van+H": AblationFlags(hierarchy=True, recycling=False),
    "Full": AblationFlags(hierarchy=True, recycling=True),
}

ESTIMATORS: Tuple[str, ...] = ("SP", "SP-s", "SP-st", "MC")

# Robot at the origin facing +x, particles around (10, 0): the cone is
# wide and long enough to see essentially all of them.
BENCH_SENSOR = SensorConfig(max_range=30.0, half_angle=math.pi / 2)
BENCH_BASE_NOISE = ((0.1, 0.0), (0.0, 0.01))
BENCH_CENTRE = (10.0, 0.0)


# ── Ground truth ───────────────────────────────────────────────────────


class TargetWalker:
    """Scripted target: constant-speed waypoint follower with optional jitter.

    Waypoints are visited cyclically. Moves that would leave the map or
    enter an Occupied cell are dropped.
    """

    def __init__(self, script: TargetScript, truth: OccupancyGrid, dt: float) -> None:
        if not truth.contains(*script.start):
            raise ScenarioError(f"target start {script.start} lies outside the map")
        self._truth = truth
        self._dt = dt
        self._speed = script.speed
        self._jitter = script.jitter
        self._waypoints = [np.array(w, dtype=float) for w in script.waypoints]
        self._next = 0
        self.position = np.array(script.start, dtype=float)

    @property
    def state(self) -> TargetState:
        return TargetState(float(self.position[0]), float(self.position[1]))

    def _free(self, point: np.ndarray) -> bool:
        if not self._truth.contains(point[0], point[1]):
            return False
        i, j = self._truth.cell_of(point[0], point[1])
        return self._truth.state(i, j) != CellState.OCCUPIED

    def step(self, rng: np.random.Generator) -> None:
        if self._waypoints and self._speed > 0:
            budget = self._speed * self._dt
            for _ in range(len(self._waypoints) + 1):
                goal = self._waypoints[self._next]
                gap = float(np.linalg.norm(goal - self.position))
                if gap > budget:
                    self.position = self.position + (goal - self.position) * (budget / gap)
                    break
                self.position = goal.copy()
                budget -= gap
                self._next = (self._next + 1) % len(self._waypoints)
        if self._jitter > 0:
            candidate = self.position + rng.normal(0.0, self._jitter, size=2)
            if self._free(candidate):
                self.position = candidate


# ── Metrics ────────────────────────────────────────────────────────────


@dataclass
class StepRecord:  # pylint: disable=too-many-instance-attributes
    """One row of the trajectory log."""

    step: int
    robot: RobotPose
    target: TargetState
    estimate: TargetState
    measurement: Measurement
    stage: str
    horizon: int
    action: RobotControl
    belief_nodes: int
    rollouts: int
    reuses: int
    recovered: bool

    def as_row(self) -> Dict[str, Any]:
        detection = isinstance(self.measurement, Detection)
        return {
            "step": self.step,
            "robot_x": _fmt(self.robot.x),
            "robot_y": _fmt(self.robot.y),
            "robot_theta": _fmt(self.robot.theta),
            "target_x": _fmt(self.target.x),
            "target_y": _fmt(self.target.y),
            "estimate_x": _fmt(self.estimate.x),
            "estimate_y": _fmt(self.estimate.y),
            "measurement": "detection" if detection else "empty",
            "range": _fmt(self.measurement.range) if isinstance(self.measurement, Detection) else None,
            "bearing": _fmt(self.measurement.bearing) if isinstance(self.measurement, Detection) else None,
            "stage": self.stage,
            "horizon": self.horizon,
            "action_v": _fmt(self.action.v),
            "action_w": _fmt(self.action.w),
            "belief_nodes": self.belief_nodes,
            "rollouts": self.rollouts,
            "reuses": self.reuses,
            "recovered": int(self.recovered),
        }


@dataclass
class EpisodeMetrics:  # pylint: disable=too-many-instance-attributes
    """Search and tracking quality of one episode.

    ``steps_to_find`` is ``inf`` when the target is never detected; then
    ``r_los`` and ``eps_est`` are ``None``. ``plan_times`` (seconds) are
    kept out of :meth:`as_row`.
    """

    scenario: str
    variant: str
    seed: int
    steps: int
    steps_to_find: float
    t_s: Optional[float] = None
    r_los: Optional[float] = None
    eps_est: Optional[float] = None
    tracking_steps: int = 0
    lost_steps: int = 0
    plan_cycles: int = 0
    rollouts: int = 0
    reuses: int = 0
    degenerate_events: int = 0
    stuck_events: int = 0
    collisions: int = 0
    plan_times: List[float] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return math.isfinite(self.steps_to_find)

    def as_row(self) -> Dict[str, Any]:
        return {
            "metrics_version": METRICS_VERSION,
            "scenario": self.scenario,
            "variant": self.variant,
            "seed": self.seed,
            "steps": self.steps,
            "steps_to_find": _fmt(self.steps_to_find, digits=0),
            "t_s": _fmt(self.t_s, digits=0),
            "r_los": _fmt(self.r_los),
            "eps_est": _fmt(self.eps_est),
            "tracking_steps": self.tracking_steps,
            "lost_steps": self.lost_steps,
            "plan_cycles": self.plan_cycles,
            "rollouts": self.rollouts,
            "reuses": self.reuses,
            "degenerate_events": self.degenerate_events,
            "stuck_events": self.stuck_events,
            "collisions": self.collisions,
        }


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    trajectory: List[StepRecord]


def _fmt(value: Optional[float], digits: int = 6) -> Optional[str]:
    if value is None:
        return None
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.{digits}f}"


def tracking_metrics(
    detections: Sequence[bool], errors: Sequence[float]
) -> Tuple[float, Optional[float], Optional[float], int, int]:
    """``(steps_to_find, r_los, eps_est, T_tra, T_los)`` from per-step logs.

    Tracking starts at the first detection; every later step without a
    detection counts as lost.
    """
    first = next((k for k, hit in enumerate(detections) if hit), None)
    if first is None:
        return math.inf, None, None, 0, 0
    tracked = len(detections) - first
    lost = sum(1 for hit in detections[first:] if not hit)
    return float(first), lost / tracked, float(np.mean(errors[first:])), tracked, lost


def search_time_difference(steps: float, reference: float) -> Optional[float]:
    """``t_s``: extra steps to find the target compared with the reference run."""
    if math.isinf(steps) or math.isinf(reference):
        return None
    return steps - reference


# ── Episodes ───────────────────────────────────────────────────────────


def load_truth_map(cfg: ScenarioConfig) -> OccupancyGrid:
    try:
        text = Path(cfg.map_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read map {cfg.map_path}: {exc}") from exc
    return load_map(text)


def _stop_action(cfg: ScenarioConfig) -> RobotControl:
    limits = cfg.limits
    return RobotControl(
        min(max(0.0, limits.v_min), limits.v_max), min(max(0.0, limits.w_min), limits.w_max)
    )


def _plan(  # pylint: disable=too-many-arguments,too-many-positional-arguments
    cfg: ScenarioConfig,
    flags: AblationFlags,
    planner_kind: str,
    known: OccupancyGrid,
    models: SystemModel,
    pose: RobotPose,
    belief: ParticleBelief,
    z: Measurement,
    horizon: int,
    rng: np.random.Generator,
) -> PlanResult:
    root_belief = belief
    goal = None
    if flags.hierarchy:
        layers = particle_hierarchy(belief, pose, known, cfg.hierarchy, cfg.planner.robot_radius)
        root_belief, goal = layers.simplified, layers.goal.point
    root = JointBeliefState(pose, root_belief)
    reward = make_mi_reward(cfg.camera, known, models, cfg.mi)
    if planner_kind == "greedy":
        return plan_greedy(known, root, cfg.planner, reward, models=models, goal=goal)
    return build_tree(
        known,
        root,
        cfg.planner,
        reward,
        rng,
        models=models,
        camera=cfg.camera,
        filter_cfg=cfg.filter,
        goal=goal,
        horizon=horizon,
        root_observation=z,
        recycling=cfg.planner.recycling and flags.recycling,
    )


def run_episode(  # pylint: disable=too-many-locals,too-many-statements
    cfg: ScenarioConfig,
    *,
    seed: Optional[int] = None,
    variant: Optional[str] = None,
    planner_kind: str = "tree",
    scenario_name: Optional[str] = None,
) -> EpisodeResult:
    """Run one closed-loop search and tracking episode.

    Each step senses (lidar mapping, then camera), updates the belief,
    plans on the known map, executes the first action and advances the
    target. ``variant`` names one of :data:`VARIANTS`; without it the
    scenario's own ablation flags apply. ``planner_kind="greedy"`` swaps the tree search
    for the one-step next-best-view planner.
    """
    if planner_kind not in ("tree", "greedy"):
        raise InputDomainError(f"unknown planner {planner_kind!r}")
    if variant is None:
        flags = cfg.ablation
        variant = next((k for k, v in VARIANTS.items() if v == flags), "custom")
    elif variant in VARIANTS:
        flags = VARIANTS[variant]
    else:
        raise InputDomainError(f"unknown variant {variant!r}")
    if planner_kind == "greedy":
        variant = "greedy"
    seed = cfg.seed if seed is None else seed
    name = scenario_name or Path(cfg.map_path).stem
    world_rng, filter_rng, plan_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    )

    truth = load_truth_map(cfg)
    known = truth if cfg.known_map else OccupancyGrid.filled(
        truth.width, truth.height, truth.resolution, truth.origin, CellState.UNKNOWN
    )
    models = SystemModel(cfg.dt, cfg.limits, NoiseModel.from_config(cfg.noise))
    pose = RobotPose(*cfg.robot_start)
    if not truth.contains(pose.x, pose.y):
        raise ScenarioError(f"robot start {cfg.robot_start} lies outside the map")
    walker = TargetWalker(cfg.target, truth, cfg.dt)
    belief = sample_gmm_belief(cfg.initial_belief, cfg.n_particles, filter_rng, grid=known)
    reseed_rng = filter_rng if cfg.filter.reseed_on_detection else None

    metrics = EpisodeMetrics(name, variant, seed, cfg.episode_steps, math.inf)
    trajectory: List[StepRecord] = []
    detections: List[bool] = []
    errors: List[float] = []
    logger.info("Episode %s/%s seed=%d: %d steps", name, variant, seed, cfg.episode_steps)

    for k in range(cfg.episode_steps):
        if not cfg.known_map:
            known = update_map(known, pose, cfg.lidar, truth)
        target = walker.state
        z = observe(pose, target, cfg.camera, truth, models.noise.Sigma, world_rng)
        belief, recovered = update_with_recovery(
            belief, z, pose, cfg.camera, known, models.noise.Sigma,
            policy=cfg.filter.degenerate_recovery, reseed_rng=reseed_rng,
        )
        metrics.degenerate_events += int(recovered)
        if should_resample(belief, cfg.filter.resample_threshold):
            belief = resample_low_variance(belief, filter_rng)

        detected = isinstance(z, Detection)
        detections.append(detected)
        estimate = mean_estimate(belief)
        errors.append(math.hypot(estimate.x - target.x, estimate.y - target.y))
        tracking = any(detections)
        horizon = cfg.planner.horizon_tracking if tracking else cfg.planner.horizon

        try:
            plan = _plan(cfg, flags, planner_kind, known, models, pose, belief, z, horizon, plan_rng)
            action: RobotControl = plan.action
            diagnostics: Optional[PlanDiagnostics] = plan.diagnostics
        except PlannerStuckError as exc:
            logger.warning("Step %d: %s; stopping in place", k, exc)
            metrics.stuck_events += 1
            action, diagnostics = _stop_action(cfg), None

        metrics.plan_cycles += 1
        if diagnostics is not None:
            metrics.rollouts += diagnostics.rollouts
            metrics.reuses += diagnostics.reuses
            metrics.plan_times.append(diagnostics.wall_time)

        trajectory.append(
            StepRecord(
                step=k,
                robot=pose,
                target=target,
                estimate=estimate,
                measurement=z,
                stage="tracking" if tracking else "search",
                horizon=horizon,
                action=action,
                belief_nodes=diagnostics.belief_nodes if diagnostics else 0,
                rollouts=diagnostics.rollouts if diagnostics else 0,
                reuses=diagnostics.reuses if diagnostics else 0,
                recovered=recovered,
            )
        )

        moved = step_robot(pose, action, cfg.dt, cfg.limits)
        if motion_collides(truth, 0.0, (pose.x, pose.y), (moved.x, moved.y)):
            metrics.collisions += 1
            logger.warning("Step %d: motion blocked by an unmapped obstacle", k)
            moved = RobotPose(pose.x, pose.y, moved.theta)
        pose = moved
        walker.step(world_rng)
        belief = predict(belief, models.noise.Q, filter_rng, grid=known)

    (
        metrics.steps_to_find,
        metrics.r_los,
        metrics.eps_est,
        metrics.tracking_steps,
        metrics.lost_steps,
    ) = tracking_metrics(detections, errors)
    logger.info(
        "Episode %s/%s seed=%d finished: found at %s, r_los=%s",
        name, variant, seed, metrics.steps_to_find, metrics.r_los,
    )
    return EpisodeResult(metrics, trajectory)


def run_scenario(
    cfg: ScenarioConfig,
    *,
    seed: Optional[int] = None,
    reference: str = "greedy",
    scenario_name: Optional[str] = None,
) -> EpisodeResult:
    """:func:`run_episode` plus ``t_s`` against a greedy reference run."""
    result = run_episode(cfg, seed=seed, scenario_name=scenario_name)
    if reference == "greedy":
        ref = run_episode(cfg, seed=seed, planner_kind="greedy", scenario_name=scenario_name)
        result.metrics.t_s = search_time_difference(
            result.metrics.steps_to_find, ref.metrics.steps_to_find
        )
    elif reference != "none":
        raise InputDomainError(f"unknown reference {reference!r}")
    return result


# ── Ablation ───────────────────────────────────────────────────────────


@dataclass
class AblationResult:
    episodes: List[EpisodeMetrics]
    summary: List[Dict[str, Any]]
    timings: List[Dict[str, Any]]


def _mean_std(values: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    return statistics.fmean(values), statistics.pstdev(values)


def summarise_ablation(
    episodes: Sequence[EpisodeMetrics], variants: Sequence[str]
) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    """Per-variant summary rows (deterministic) and timing rows (wall clock)."""
    summary, timings = [], []
    for variant in variants:
        runs = [m for m in episodes if m.variant == variant]
        found = [m.steps_to_find for m in runs if m.found]
        steps_mean, steps_std = _mean_std(found)
        plan_mean, plan_std = _mean_std([t for m in runs for t in m.plan_times])
        summary.append(
            {
                "variant": variant,
                "trials": len(runs),
                "found": len(found),
                "steps_to_find_mean": _fmt(steps_mean),
                "steps_to_find_std": _fmt(steps_std),
                "rollouts_mean": _fmt(statistics.fmean(m.rollouts for m in runs) if runs else None),
                "reuses_mean": _fmt(statistics.fmean(m.reuses for m in runs) if runs else None),
            }
        )
        timings.append(
            {"variant": variant, "plan_time_mean": _fmt(plan_mean), "plan_time_std": _fmt(plan_std)}
        )
    return summary, timings


def run_ablation(
    cfg: ScenarioConfig,
    variants: Sequence[str] = tuple(VARIANTS),
    trials: int = 1,
    *,
    seed: Optional[int] = None,
    workers: int = 1,
    reference: str = "none",
    scenario_name: Optional[str] = None,
) -> AblationResult:
    """Every variant on the same ``trials`` seeds (``seed``, ``seed + 1``, ...)."""
    if trials < 1:
        raise InputDomainError("trials must be at least 1")
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise InputDomainError(f"unknown variants: {', '.join(unknown)}")
    if reference not in ("greedy", "none"):
        raise InputDomainError(f"unknown reference {reference!r}")
    base = cfg.seed if seed is None else seed
    seeds = [base + t for t in range(trials)]

    def episode(job: Tuple[str, int]) -> EpisodeMetrics:
        variant, job_seed = job
        if variant == "greedy":
            return run_episode(
                cfg, seed=job_seed, planner_kind="greedy", scenario_name=scenario_name
            ).metrics
        return run_episode(cfg, seed=job_seed, variant=variant, scenario_name=scenario_name).metrics

    jobs = [(variant, s) for variant in variants for s in seeds]
    reference_jobs = [("greedy", s) for s in seeds] if reference == "greedy" else []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(episode, jobs + reference_jobs))
    episodes = results[: len(jobs)]
    if reference_jobs:
        ref_steps = {m.seed: m.steps_to_find for m in results[len(jobs) :]}
        episodes = [
            replace(m, t_s=search_time_difference(m.steps_to_find, ref_steps[m.seed]))
            for m in episodes
        ]
    summary, timings = summarise_ablation(episodes, variants)
    return AblationResult(episodes, summary, timings)


# ── MI benchmark ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class BenchRow:
    estimator: str
    sweep: str
    value: float
    entropy: float
    abs_error: float
    mc_stderr: Optional[float]
    wall_ns: int

    def as_row(self) -> Dict[str, Any]:
        return {
            "estimator": self.estimator,
            "sweep": self.sweep,
            "value": f"{self.value:g}",
            "entropy": _fmt(self.entropy, digits=8),
            "abs_error": _fmt(self.abs_error, digits=8),
            "mc_stderr": _fmt(self.mc_stderr, digits=8),
            "wall_ns": self.wall_ns,
        }


def bench_particles(
    sweep: str, value: float, n_particles: int, rng: np.random.Generator
) -> Tuple[ParticleBelief, np.ndarray]:
    """Particles from N(centre, alpha I) and the noise beta * diag(0.1, 0.01).

    The parameter not being swept is 1.
    """
    if sweep not in ("alpha", "beta"):
        raise InputDomainError(f"unknown sweep {sweep!r}; expected 'alpha' or 'beta'")
    if not value > 0:
        raise InputDomainError("sweep values must be positive")
    alpha = value if sweep == "alpha" else 1.0
    beta = value if sweep == "beta" else 1.0
    states = np.array(BENCH_CENTRE) + math.sqrt(alpha) * rng.standard_normal((n_particles, 2))
    return ParticleBelief.uniform(states), beta * np.array(BENCH_BASE_NOISE)


def _timed(func: Any) -> Tuple[Any, int]:
    started = time.perf_counter_ns()
    out = func()
    return out, time.perf_counter_ns() - started


def run_mi_bench(  # pylint: disable=too-many-arguments,too-many-locals
    sweep: str,
    values: Sequence[float],
    estimators: Sequence[str] = ESTIMATORS,
    *,
    n_particles: int = 500,
    seed: int = 0,
    mc_samples: int = 1_000_000,
    simplify_cell: float = 0.2,
    lam: float = 2.0,
) -> List[BenchRow]:
    """Entropy of the predicted measurement under each estimator, per sweep point.

    SP uses every particle, SP-s simplifies on a ``simplify_cell`` grid
    first and SP-st also truncates at the automatic radius. Errors are
    measured against a Monte-Carlo reference with ``mc_samples`` samples.
    """
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise InputDomainError(f"unknown estimators: {', '.join(unknown)}")
    if not values:
        raise InputDomainError("the sweep needs at least one value")
    rng = np.random.default_rng(seed)
    pose = RobotPose(0.0, 0.0, 0.0)
    dense = MiConfig(lam=lam, truncation_radius=math.inf)
    truncated = MiConfig(lam=lam, truncation_radius="auto")
    rows: List[BenchRow] = []
    for value in values:
        belief, sigma = bench_particles(sweep, value, n_particles, rng)
        if not estimators:
            continue

        def entropy(particles: ParticleBelief, cfg: MiConfig, sigma: np.ndarray = sigma) -> float:
            g = gmm_from_particles(pose, particles.states, particles.weights, BENCH_SENSOR, None, sigma)
            return sp_entropy(g, cfg)

        runs: Dict[str, Any] = {
            "SP": lambda b=belief: entropy(b, dense),
            "SP-s": lambda b=belief: entropy(simplify_particles(b, simplify_cell), dense),
            "SP-st": lambda b=belief: entropy(simplify_particles(b, simplify_cell), truncated),
        }
        gmm = gmm_from_particles(pose, belief.states, belief.weights, BENCH_SENSOR, None, sigma)
        reference, mc_ns = _timed(lambda: mc_entropy(gmm, mc_samples, rng))
        assert isinstance(reference, EntropyEstimate)
        for name in estimators:
            if name == "MC":
                rows.append(
                    BenchRow("MC", sweep, value, reference.value, 0.0, reference.stderr, mc_ns)
                )
                continue
            estimate, wall_ns = _timed(runs[name])
            rows.append(
                BenchRow(name, sweep, value, estimate, abs(estimate - reference.value), None, wall_ns)
            )
    return rows


# ── Output ─────────────────────────────────────────────────────────────


def write_table(
    path: Path, rows: Iterable[Mapping[str, Any]], columns: Sequence[str], fmt: str = "csv"
) -> Path:
    """Write ``rows`` as CSV (``None`` as an empty cell) or as a JSON list."""
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    if fmt == "json":
        payload = [{c: row.get(c) for c in columns} for row in rows]
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        return path
    if fmt != "csv":
        raise InputDomainError(f"unknown format {fmt!r}")
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: "" if row.get(c) is None else row.get(c) for c in columns})
    return path


def timing_summary(metrics: EpisodeMetrics) -> Dict[str, Any]:
    times = metrics.plan_times
    return {
        "plan_cycles": len(times),
        "plan_time_mean": _fmt(statistics.fmean(times) if times else None),
        "plan_time_median": _fmt(statistics.median(times) if times else None),
        "plan_time_max": _fmt(max(times) if times else None),
    }


def write_episode(result: EpisodeResult, out_dir: Path, fmt: str = "csv") -> List[Path]:
    """``metrics.<fmt>``, ``trajectory.csv`` and ``timings.csv`` under ``out_dir``."""
    return [
        write_table(out_dir / f"metrics.{fmt}", [result.metrics.as_row()], METRICS_COLUMNS, fmt),
        write_table(
            out_dir / "trajectory.csv", (r.as_row() for r in result.trajectory), TRAJECTORY_COLUMNS
        ),
        write_table(
            out_dir / "timings.csv",
            [timing_summary(result.metrics)],
            ("plan_cycles", "plan_time_mean", "plan_time_median", "plan_time_max"),
        ),
    ]


def write_ablation(result: AblationResult, out_dir: Path, fmt: str = "csv") -> List[Path]:
    return [
        write_table(out_dir / f"episodes.{fmt}", (m.as_row() for m in result.episodes), METRICS_COLUMNS, fmt),
        write_table(out_dir / f"ablation.{fmt}", result.summary, ABLATION_COLUMNS, fmt),
        write_table(out_dir / "ablation_timings.csv", result.timings, ABLATION_TIMING_COLUMNS),
    ]


def write_bench(rows: Sequence[BenchRow], out_dir: Path, fmt: str = "csv") -> Path:
    return write_table(out_dir / f"mi_bench.{fmt}", (r.as_row() for r in rows), BENCH_COLUMNS, fmt)


__all__: Iterable[str] = (
    "METRICS_COLUMNS",
    "TRAJECTORY_COLUMNS",
    "BENCH_COLUMNS",
    "VARIANTS",
    "ESTIMATORS",
    "TargetWalker",
    "StepRecord",
    "EpisodeMetrics",
    "EpisodeResult",
    "AblationResult",
    "BenchRow",
    "tracking_metrics",
    "search_time_difference",
    "load_truth_map",
    "run_episode",
    "run_scenario",
    "run_ablation",
    "summarise_ablation",
    "bench_particles",
    "run_mi_bench",
    "write_table",
    "write_episode",
    "write_ablation",
    "write_bench",
)
