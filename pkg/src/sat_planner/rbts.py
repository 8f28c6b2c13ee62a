"""Belief tree search with rollout recycling.

The tree alternates belief nodes (robot pose plus particle belief) and
action nodes (one motion primitive each). Every iteration selects a leaf
with UCB, samples an action and an observation, expands a new belief
node and values it. Instead of always running a rollout, the value of a
new node is taken from a cached rollout of a nearby node when one lies
within ``d_thr``; after a fresh rollout, untried actions elsewhere in the
tree that would land within ``d_thr`` of the new node with the same
observation are expanded and receive the same value. Values are then
backed up to the root.

Node distance is the Euclidean distance between robot positions when the
last observations agree (within ``o_thr`` per component) and infinite
otherwise. Recycling requires a distance strictly below ``d_thr``, so
``d_thr = 0`` reproduces plain MCTS.

Trees and rollout caches live for one planning cycle.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from sat_planner.belief import (
    JointBeliefState,
    ParticleBelief,
    mean_estimate,
    predict,
    recover_degenerate,
    resample_low_variance,
    reweight,
    should_resample,
    update_with_recovery,
)
from sat_planner.config import FilterConfig, MiConfig, PlannerConfig, SensorConfig
from sat_planner.environment import OccupancyGrid, motion_collides, visible_mask, wrap_angle
from sat_planner.errors import DegeneratePosteriorError, InternalInvariantError, PlannerStuckError
from sat_planner.mi_reward import mi_reward
from sat_planner.models import (
    EMPTY,
    Detection,
    Measurement,
    RobotControl,
    RobotPose,
    SystemModel,
    TargetState,
    assumed_target_dynamics,
    check_control,
    measurement_function,
    obs_log_likelihoods,
    observe,
    step_robot,
    step_target_model,
)

logger = logging.getLogger(__name__)

RewardFn = Callable[[JointBeliefState, RobotControl], float]
Point = Tuple[float, float]

_TIE_EPS = 1e-12


def _goal_score(pose: RobotPose, goal: Point) -> Tuple[float, float]:
    """(heading error, distance) of ``pose`` relative to ``goal``; smaller is better."""
    gx, gy = goal
    heading_error = abs(wrap_angle(math.atan2(gy - pose.y, gx - pose.x) - pose.theta))
    return round(heading_error, 9), math.hypot(gx - pose.x, gy - pose.y)


# ── Tree nodes ─────────────────────────────────────────────────────────


@dataclass(eq=False)
class BeliefNode:  # pylint: disable=too-many-instance-attributes
    """Belief node; ``observation`` is the last observation of its history."""

    belief: JointBeliefState
    depth: int
    observation: Measurement = EMPTY
    history: Tuple[Tuple[int, Measurement], ...] = ()
    parent: Optional["ActionNode"] = None
    untried: List[int] = field(default_factory=list)
    children: Dict[int, "ActionNode"] = field(default_factory=dict)
    visits: int = 0
    value: float = 0.0
    recovered: bool = False

    @property
    def robot(self) -> RobotPose:
        return self.belief.robot


@dataclass(eq=False)
class ActionNode:
    """Action node; ``reward`` is the one-step reward of its action from the parent belief."""

    action: int
    parent: BeliefNode
    reward: float
    detect_mass: float = 1.0
    children: List[BeliefNode] = field(default_factory=list)
    visits: int = 0
    q_value: float = 0.0

    @property
    def mean_value(self) -> float:
        return self.q_value / self.visits if self.visits else 0.0


TreeNode = Union[BeliefNode, ActionNode]


@dataclass(frozen=True, eq=False)
class RolloutCluster:
    """A belief node with a completed rollout and the rollout's value."""

    node: BeliefNode
    reward: float


@dataclass(frozen=True)
class PlanDiagnostics:
    """Counters of one planning cycle. ``wall_time`` is in seconds."""

    belief_nodes: int = 1
    action_nodes: int = 0
    rollouts: int = 0
    reuses: int = 0
    iterations: int = 0
    horizon: int = 0
    wall_time: float = 0.0


@dataclass(frozen=True)
class PlanResult:
    """Chosen root action plus the values of every expanded root action."""

    action: RobotControl
    action_index: int
    diagnostics: PlanDiagnostics
    root_values: Dict[int, float] = field(default_factory=dict)


def node_distance(n1: BeliefNode, n2: BeliefNode, o_thr: float) -> float:
    """Robot distance between two belief nodes whose last observations agree."""
    o1, o2 = n1.observation, n2.observation
    if isinstance(o1, Detection) != isinstance(o2, Detection):
        return math.inf
    if isinstance(o1, Detection) and isinstance(o2, Detection):
        if abs(o1.range - o2.range) > o_thr or abs(wrap_angle(o1.bearing - o2.bearing)) > o_thr:
            return math.inf
    return math.hypot(n1.robot.x - n2.robot.x, n1.robot.y - n2.robot.y)


def make_mi_reward(
    camera: SensorConfig,
    grid: Optional[OccupancyGrid],
    models: SystemModel,
    cfg: MiConfig,
) -> RewardFn:
    """The MI reward bound to one sensor, map and model."""

    def reward(B: JointBeliefState, a: RobotControl) -> float:
        return mi_reward(B, a, camera, grid, models, cfg)

    return reward


# ── Search ─────────────────────────────────────────────────────────────


class BeliefTreeSearch:  # pylint: disable=too-many-instance-attributes
    """One planning cycle of belief tree search with rollout recycling."""

    def __init__(  # pylint: disable=too-many-arguments
        self,
        root: JointBeliefState,
        *,
        grid: Optional[OccupancyGrid],
        models: SystemModel,
        camera: SensorConfig,
        planner: PlannerConfig,
        reward: RewardFn,
        rng: np.random.Generator,
        filter_cfg: Optional[FilterConfig] = None,
        goal: Optional[Point] = None,
        horizon: Optional[int] = None,
        root_observation: Measurement = EMPTY,
        recycling: Optional[bool] = None,
    ) -> None:
        self.grid = grid
        self.models = models
        self.camera = camera
        self.cfg = planner
        self.filter_cfg = filter_cfg or FilterConfig()
        self.reward = reward
        self.rng = rng
        self.goal = goal
        self.horizon = planner.horizon if horizon is None else horizon
        self.recycle = planner.recycling if recycling is None else recycling
        self.d_thr = planner.resolved_d_thr(models.dt)

        self.primitives = [RobotControl(v, w) for v, w in planner.primitives]
        for u in self.primitives:
            check_control(u, models.limits)

        self.root = BeliefNode(
            root, depth=0, observation=root_observation, untried=self.feasible_actions(root.robot)
        )
        self.belief_nodes: List[BeliefNode] = [self.root]
        self.action_nodes: List[ActionNode] = []
        self.cache: List[RolloutCluster] = []
        self.rollouts = 0
        self.reuses = 0
        self.iterations = 0

    # ── helpers ──

    def feasible_actions(self, pose: RobotPose) -> List[int]:
        """Indices of the primitives whose motion stays clear of inflated obstacles."""
        if self.grid is None:
            return list(range(len(self.primitives)))
        start = (pose.x, pose.y)
        out = []
        for idx, u in enumerate(self.primitives):
            nxt = step_robot(pose, u, self.models.dt)
            if not motion_collides(self.grid, self.cfg.robot_radius, start, (nxt.x, nxt.y)):
                out.append(idx)
        return out

    def _step(self, pose: RobotPose, action: int) -> RobotPose:
        return step_robot(pose, self.primitives[action], self.models.dt)

    def add_action_node(self, parent: BeliefNode, action: int) -> ActionNode:
        """Create the action node for ``action`` under ``parent`` and compute its reward."""
        if action in parent.children:
            raise InternalInvariantError(f"action {action} already expanded")
        if action in parent.untried:
            parent.untried.remove(action)
        detect_mass = 1.0
        if self.cfg.pw_fov_scaled:
            states = assumed_target_dynamics(parent.belief.belief.states)
            inside = visible_mask(self._step(parent.robot, action), states, self.camera, self.grid)
            detect_mass = float(parent.belief.belief.weights[inside].sum())
        node = ActionNode(
            action,
            parent,
            reward=float(self.reward(parent.belief, self.primitives[action])),
            detect_mass=detect_mass,
        )
        parent.children[action] = node
        self.action_nodes.append(node)
        return node

    def _q_bounds(self) -> Tuple[float, float]:
        means = [an.mean_value for an in self.action_nodes if an.visits]
        if not means:
            return 0.0, 0.0
        return min(means), max(means)

    def _ucb_child(self, node: BeliefNode) -> ActionNode:
        lo, hi = self._q_bounds()
        span = hi - lo
        log_visits = math.log(max(node.visits, 1))
        best: Optional[ActionNode] = None
        best_score = -math.inf
        for action in sorted(node.children):
            child = node.children[action]
            if child.visits == 0:
                return child
            exploit = (child.mean_value - lo) / span if span > _TIE_EPS else 0.0
            score = exploit + self.cfg.c_ucb * math.sqrt(log_visits / child.visits)
            if score > best_score + _TIE_EPS:
                best, best_score = child, score
        assert best is not None
        return best

    def _admits_observation(self, node: ActionNode) -> bool:
        """Progressive widening on observation children."""
        exponent = self.cfg.pw_alpha
        if self.cfg.pw_fov_scaled:
            exponent *= node.detect_mass
        return len(node.children) < self.cfg.pw_k * max(node.visits, 1) ** exponent

    # ── the five steps ──

    def selection(self) -> TreeNode:
        """Descend by UCB to a belief node with untried actions, a terminal
        belief node, or an action node that may take another observation child."""
        node = self.root
        while True:
            if node.depth >= self.horizon or node.untried or not node.children:
                return node
            action_node = self._ucb_child(node)
            if not action_node.children or self._admits_observation(action_node):
                return action_node
            pick = int(self.rng.integers(len(action_node.children)))
            node = action_node.children[pick]

    def sample_action_observation(self, node: TreeNode) -> Tuple[int, Measurement]:
        """Draw an untried action (or take the action node's) and simulate its observation."""
        if isinstance(node, ActionNode):
            parent, action = node.parent, node.action
        else:
            if not node.untried:
                raise InternalInvariantError("belief node has no untried action")
            parent = node
            action = node.untried[int(self.rng.integers(len(node.untried)))]
        belief = parent.belief.belief
        pose = self._step(parent.robot, action)
        j = int(self.rng.choice(belief.n, p=belief.weights))
        target = step_target_model(
            TargetState(float(belief.states[j, 0]), float(belief.states[j, 1])),
            self.models.noise.Q,
            self.rng,
        )
        return action, observe(pose, target, self.camera, self.grid, self.models.noise.Sigma, self.rng)

    def expansion(self, node: BeliefNode, action: int, observation: Measurement) -> BeliefNode:
        """Add the belief reached from ``node`` by ``action`` and ``observation``."""
        action_node = node.children.get(action) or self.add_action_node(node, action)
        pose = self._step(node.robot, action)
        belief = predict(node.belief.belief, self.models.noise.Q, self.rng, grid=self.grid)
        belief, recovered = update_with_recovery(
            belief,
            observation,
            pose,
            self.camera,
            self.grid,
            self.models.noise.Sigma,
            policy=self.filter_cfg.degenerate_recovery,
        )
        if should_resample(belief, self.filter_cfg.resample_threshold):
            belief = resample_low_variance(belief, self.rng)
        child = BeliefNode(
            JointBeliefState(pose, belief),
            depth=node.depth + 1,
            observation=observation,
            history=node.history + ((action, observation),),
            parent=action_node,
            untried=self.feasible_actions(pose),
            recovered=recovered,
        )
        action_node.children.append(child)
        self.belief_nodes.append(child)
        return child

    def _nearest_cluster(self, node: BeliefNode) -> Tuple[Optional[RolloutCluster], float]:
        best: Optional[RolloutCluster] = None
        best_distance = math.inf
        for cluster in self.cache:
            distance = node_distance(node, cluster.node, self.cfg.o_thr)
            if distance < best_distance:
                best, best_distance = cluster, distance
        return best, best_distance

    def recycling(self, n_new: BeliefNode) -> List[BeliefNode]:
        """Value ``n_new`` by reuse or rollout; returns every node that got a new value."""
        if self.recycle:
            cluster, distance = self._nearest_cluster(n_new)
            if cluster is not None and distance < self.d_thr:
                n_new.value = cluster.reward
                self.reuses += 1
                return [n_new]

        n_new.value = self.simulation(n_new)
        self.rollouts += 1
        valued = [n_new]
        if not self.recycle or self.d_thr <= 0:
            return valued
        self.cache.append(RolloutCluster(n_new, n_new.value))

        for node in list(self.belief_nodes):
            if node is n_new or node.depth >= self.horizon:
                continue
            for action in list(node.untried):
                landing = self._step(node.robot, action)
                if math.hypot(landing.x - n_new.robot.x, landing.y - n_new.robot.y) >= self.d_thr:
                    continue
                child = self.expansion(node, action, n_new.observation)
                child.value = n_new.value
                valued.append(child)
                self.reuses += 1
        return valued

    def _rollout_action(self, state: JointBeliefState) -> Optional[int]:
        feasible = self.feasible_actions(state.robot)
        if not feasible:
            return None
        if self.cfg.rollout_policy == "random":
            return feasible[int(self.rng.integers(len(feasible)))]
        if self.goal is not None:
            gx, gy = self.goal
        else:
            estimate = mean_estimate(state.belief)
            gx, gy = estimate.x, estimate.y

        return min(
            feasible, key=lambda a: (*_goal_score(self._step(state.robot, a), (gx, gy)), a)
        )

    def _rollout_transition(self, state: JointBeliefState, action: int) -> JointBeliefState:
        """Deterministic belief step with the maximum-likelihood observation."""
        pose = self._step(state.robot, action)
        belief = state.belief
        states = assumed_target_dynamics(belief.states)
        inside = visible_mask(pose, states, self.camera, self.grid)
        mass = float(belief.weights[inside].sum())
        predicted = ParticleBelief(states, belief.weights)
        z: Measurement = EMPTY
        if mass >= 0.5:
            h = measurement_function(pose, states[inside])
            w = belief.weights[inside] / mass
            z = Detection(
                max(float(w @ h[:, 0]), 0.0),
                math.atan2(float(w @ np.sin(h[:, 1])), float(w @ np.cos(h[:, 1]))),
            )
        log_lik = obs_log_likelihoods(z, states, pose, self.camera, self.grid, self.models.noise.Sigma)
        try:
            updated = reweight(predicted, log_lik)
        except DegeneratePosteriorError:
            updated = recover_degenerate(
                predicted, pose, self.camera, self.grid, self.filter_cfg.degenerate_recovery
            )
        return JointBeliefState(pose, updated)

    def simulation(self, node: BeliefNode) -> float:
        """Discounted reward of a rollout from ``node`` to the horizon."""
        state = node.belief
        total = 0.0
        discount = 1.0
        for _ in range(max(self.horizon - node.depth, 0)):
            action = self._rollout_action(state)
            if action is None:
                break
            total += discount * float(self.reward(state, self.primitives[action]))
            discount *= self.cfg.gamma
            state = self._rollout_transition(state, action)
        return total

    def backpropagation(self, node: BeliefNode, value: float) -> None:
        """Propagate ``value`` from ``node`` to the root."""
        node.visits += 1
        child = node
        while child.parent is not None:
            action_node = child.parent
            value = action_node.reward + self.cfg.gamma * value
            action_node.q_value += value
            action_node.visits += 1
            child = action_node.parent
            child.visits += 1

    # ── driver ──

    def diagnostics(self, wall_time: float = 0.0) -> PlanDiagnostics:
        return PlanDiagnostics(
            belief_nodes=len(self.belief_nodes),
            action_nodes=len(self.action_nodes),
            rollouts=self.rollouts,
            reuses=self.reuses,
            iterations=self.iterations,
            horizon=self.horizon,
            wall_time=wall_time,
        )

    def best_action(self) -> int:
        """Root action with the highest mean value; lowest index on ties."""
        best, best_value = -1, -math.inf
        for action in sorted(self.root.children):
            child = self.root.children[action]
            if child.visits and child.mean_value > best_value + _TIE_EPS:
                best, best_value = action, child.mean_value
        if best < 0:
            feasible = sorted(self.root.children) or self.root.untried
            best = min(feasible)
        return best

    def build(self) -> PlanResult:
        """Grow the tree until the belief-node budget is spent; return the best root action."""
        started = time.perf_counter()
        if not self.root.untried and not self.root.children:
            raise PlannerStuckError(
                f"no collision-free action at ({self.root.robot.x:.2f}, {self.root.robot.y:.2f})"
            )
        if len(self.root.untried) == 1 and not self.root.children:
            only = self.root.untried[0]
            return PlanResult(self.primitives[only], only, self.diagnostics(time.perf_counter() - started))

        guard = self.cfg.max_iterations_factor * self.cfg.n_max
        while len(self.belief_nodes) < self.cfg.n_max and self.iterations < guard:
            self.iterations += 1
            leaf = self.selection()
            if isinstance(leaf, BeliefNode) and (leaf.depth >= self.horizon or not leaf.untried):
                self.backpropagation(leaf, 0.0)
                continue
            action, observation = self.sample_action_observation(leaf)
            parent = leaf.parent if isinstance(leaf, ActionNode) else leaf
            n_new = self.expansion(parent, action, observation)
            for node in self.recycling(n_new):
                self.backpropagation(node, node.value)

        action = self.best_action()
        diagnostics = self.diagnostics(time.perf_counter() - started)
        logger.debug(
            "Planned action %d: %d belief nodes, %d rollouts, %d reuses, %d iterations",
            action, diagnostics.belief_nodes, diagnostics.rollouts, diagnostics.reuses,
            diagnostics.iterations,
        )
        return PlanResult(
            self.primitives[action],
            action,
            diagnostics,
            {a: n.mean_value for a, n in sorted(self.root.children.items())},
        )


def build_tree(  # pylint: disable=too-many-arguments
    grid: Optional[OccupancyGrid],
    root: JointBeliefState,
    planner: PlannerConfig,
    reward: RewardFn,
    rng: np.random.Generator,
    *,
    models: SystemModel,
    camera: SensorConfig,
    **options: object,
) -> PlanResult:
    """Run one planning cycle; ``options`` are passed to :class:`BeliefTreeSearch`."""
    search = BeliefTreeSearch(
        root, grid=grid, models=models, camera=camera, planner=planner, reward=reward, rng=rng,
        **options,  # type: ignore[arg-type]
    )
    return search.build()


def plan_greedy(
    grid: Optional[OccupancyGrid],
    root: JointBeliefState,
    planner: PlannerConfig,
    reward: RewardFn,
    *,
    models: SystemModel,
    goal: Optional[Point] = None,
) -> PlanResult:
    """Next-best-view: the feasible primitive with the largest immediate reward.

    Equal rewards (typically all zero while nothing is in view) are broken
    by heading toward ``goal``, or toward the belief mean without one.
    """
    started = time.perf_counter()
    primitives: Sequence[RobotControl] = [RobotControl(v, w) for v, w in planner.primitives]
    if goal is None:
        estimate = mean_estimate(root.belief)
        goal = (estimate.x, estimate.y)
    scores: Dict[int, float] = {}
    approach: Dict[int, Tuple[float, float]] = {}
    for idx, u in enumerate(primitives):
        nxt = step_robot(root.robot, u, models.dt)
        if grid is not None and motion_collides(
            grid, planner.robot_radius, (root.robot.x, root.robot.y), (nxt.x, nxt.y)
        ):
            continue
        scores[idx] = float(reward(root, u))
        approach[idx] = _goal_score(nxt, goal)
    if not scores:
        raise PlannerStuckError(
            f"no collision-free action at ({root.robot.x:.2f}, {root.robot.y:.2f})"
        )
    best = min(scores, key=lambda idx: (-round(scores[idx], 9), approach[idx], idx))
    return PlanResult(
        primitives[best],
        best,
        PlanDiagnostics(action_nodes=len(scores), horizon=1, wall_time=time.perf_counter() - started),
        scores,
    )


__all__: Iterable[str] = (
    "RewardFn",
    "BeliefNode",
    "ActionNode",
    "RolloutCluster",
    "PlanDiagnostics",
    "PlanResult",
    "BeliefTreeSearch",
    "node_distance",
    "make_mi_reward",
    "build_tree",
    "plan_greedy",
)
