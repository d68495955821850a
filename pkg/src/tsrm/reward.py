"""Episode engine for the two-stage reward scheme.

Searching stage: reward proportional to newly covered floor area.
Pathfinding stage: reward proportional to the drop in pose-graph distance to
the success set.  The switch happens once, the first time the detector's
confidence exceeds ``c_target``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from .actions import Action
from .geometry import Region, area, intersect, trapezoid, union
from .perception import DetectorConfig, detect, view_frustum
from .posegraph import DistanceField, PoseGraph, build_graph
from .scene import ObjectInstance, Pose, Scene


class Stage(str, Enum):
    SEARCHING = "Searching"
    PATHFINDING = "Pathfinding"


class Outcome(str, Enum):
    RUNNING = "Running"
    SUCCESS = "Success"
    FAIL_DONE = "FailDone"
    FAIL_TIMEOUT = "FailTimeout"


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    ke: float = 0.1
    kd: float = 0.15
    collision_penalty: float = -0.1
    slack_penalty: float = -0.01
    final_reward: float = 5.0
    c_target: float = 0.7
    failed_done_penalty: float = 0.0
    explore: bool = True
    distance: bool = True

    def __post_init__(self):
        if not self.ke > 0 or not self.kd > 0:
            raise ValueError("ke and kd must be positive")
        if not (0 < self.c_target < 1):
            raise ValueError(f"c_target must be in (0, 1), got {self.c_target}")


@dataclass(frozen=True)
class RewardBreakdown:
    explore: float = 0.0
    distance: float = 0.0
    collision: float = 0.0
    slack: float = 0.0
    final: float = 0.0

    @property
    def total(self) -> float:
        return self.explore + self.distance + self.collision + self.slack + self.final

    def as_dict(self) -> dict[str, float]:
        return {"explore": self.explore, "distance": self.distance, "collision": self.collision,
                "slack": self.slack, "final": self.final}


@dataclass(frozen=True)
class StepRecord:
    step: int
    action: Action
    reward: RewardBreakdown
    confidence: float
    stage: Stage  # stage whose rules produced this step's reward
    pose_before: Pose
    pose_after: Pose
    area_gain: float
    collided: bool = False
    divided: bool = False  # this step's observation crossed c_target
    dist_after: int | None = None

    @property
    def moved(self) -> bool:
        return self.pose_before.cell != self.pose_after.cell


@dataclass
class EpisodeState:
    pose: Pose
    start_pose: Pose
    stage: Stage = Stage.SEARCHING
    searched_region: Region = field(default_factory=Region.empty)
    searched_area: float = 0.0
    collision_memory: set[tuple[int, int, int]] = field(default_factory=set)
    step_count: int = 0
    trajectory: list[StepRecord] = field(default_factory=list)
    done: bool = False
    outcome: Outcome = Outcome.RUNNING
    confidence: float = 0.0
    start_confidence: float = 0.0
    divide_step: int | None = None
    divide_pose: Pose | None = None


@dataclass
class Trajectory:
    """A finished (or aborted) episode as needed by logging and metrics."""

    episode_id: int
    scene_id: str
    target: str
    start_pose: Pose
    start_stage: Stage
    start_confidence: float
    steps: list[StepRecord]
    outcome: Outcome
    divide_step: int | None
    grid_step: float

    @property
    def success(self) -> bool:
        return self.outcome is Outcome.SUCCESS

    @property
    def path_length(self) -> float:
        return sum(1 for r in self.steps if r.moved) * self.grid_step

    @property
    def divide_pose(self) -> Pose | None:
        if self.divide_step is None:
            return None
        if self.divide_step == 0:
            return self.start_pose
        return self.steps[self.divide_step - 1].pose_after

    @property
    def total_reward(self) -> float:
        return math.fsum(r.reward.total for r in self.steps)


class NavEnv:
    """One (scene, target) pair.  ``graph`` may be shared across envs."""

    def __init__(self, scene: Scene, target: ObjectInstance, reward_cfg: RewardConfig | None = None,
                 detector_cfg: DetectorConfig | None = None, graph: PoseGraph | None = None):
        self.scene = scene
        self.target = target
        self.reward_cfg = reward_cfg or RewardConfig()
        self.detector_cfg = detector_cfg or DetectorConfig()
        self.graph = graph if graph is not None else build_graph(scene)
        self.field: DistanceField = self.graph.distance_field(target)
        self._room = Region.of(scene.room_bounds)
        self.state: EpisodeState | None = None

    def random_start(self, rng: np.random.Generator) -> Pose:
        ok = np.flatnonzero(self.field.dist >= 0)
        return self.graph.pose_of(int(ok[rng.integers(len(ok))]))

    def reset(self, start_pose: Pose | None = None, seed: int | np.random.Generator | None = None) -> EpisodeState:
        if start_pose is None:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            start_pose = self.random_start(rng)
        s = self.graph.state_of(start_pose)  # KeyError/ValueError on invalid pose
        if self.field.dist[s] < 0:
            raise ValueError(f"start pose {start_pose} cannot reach the target")
        st = EpisodeState(pose=start_pose, start_pose=start_pose)
        st.confidence = detect(start_pose, self.target, self.scene, self.detector_cfg, 0).confidence
        st.start_confidence = st.confidence
        if st.confidence > self.reward_cfg.c_target:
            st.stage = Stage.PATHFINDING
            st.divide_step = 0
            st.divide_pose = start_pose
        self.state = st
        return st

    def dist(self, pose: Pose) -> int:
        d = int(self.field.dist[self.graph.state_of(pose)])
        assert d >= 0, "agent pose left the target's reachable set"
        return d

    def step(self, action: Action) -> StepRecord:
        st = self.state
        if st is None:
            raise EpisodeFinishedError("call reset() before step()")
        if st.done:
            raise EpisodeFinishedError("episode already finished")
        cfg = self.reward_cfg
        action = Action(action)
        before = st.pose
        s = self.graph.state_of(before)
        collided = False
        collision = 0.0
        after = before
        if action is not Action.DONE:
            nxt = int(self.graph.succ[s, action])
            if nxt >= 0:
                after = self.graph.pose_of(nxt)
            elif action is Action.MOVE_AHEAD:
                collided = True
                key = (before.i, before.j, before.yaw)
                if key in st.collision_memory:
                    collision = cfg.collision_penalty
                st.collision_memory.add(key)
        st.step_count += 1
        st.pose = after
        stage = st.stage
        explore = distance = final = gain = 0.0
        divided = False
        dist_after = None

        if action is Action.DONE:
            st.done = True
            if self.field.terminals[s]:
                st.outcome = Outcome.SUCCESS
                final = cfg.final_reward
            else:
                st.outcome = Outcome.FAIL_DONE
                final = cfg.failed_done_penalty
        else:
            if stage is Stage.SEARCHING:
                if cfg.explore:
                    grown = intersect(union(st.searched_region, trapezoid(view_frustum(after, self.scene))), self._room)
                    new_area = area(grown)
                    # guard against sub-ulp shrinkage from the boolean op
                    if new_area > st.searched_area:
                        gain = new_area - st.searched_area
                        st.searched_region, st.searched_area = grown, new_area
                    explore = cfg.ke * gain
            else:
                d0, d1 = self.dist(before), self.dist(after)
                dist_after = d1
                if cfg.distance:
                    distance = cfg.kd * (d0 - d1)
            st.confidence = detect(after, self.target, self.scene, self.detector_cfg, st.step_count).confidence
            if stage is Stage.SEARCHING and st.confidence > cfg.c_target:
                st.stage = Stage.PATHFINDING
                st.divide_step = st.step_count
                st.divide_pose = after
                divided = True
            if st.step_count >= self.scene.config.max_episode_length:
                st.done = True
                st.outcome = Outcome.FAIL_TIMEOUT

        rec = StepRecord(st.step_count, action,
                         RewardBreakdown(explore, distance, collision, cfg.slack_penalty, final),
                         st.confidence, stage, before, after, gain, collided, divided, dist_after)
        st.trajectory.append(rec)
        return rec

    def trajectory(self, episode_id: int = 0) -> Trajectory:
        st = self.state
        first_stage = Stage.PATHFINDING if st.divide_step == 0 else Stage.SEARCHING
        return Trajectory(episode_id, self.scene.id, self.target.category, st.start_pose, first_stage,
                          st.start_confidence, list(st.trajectory), st.outcome, st.divide_step,
                          self.scene.config.grid_step)


class Policy(Protocol):
    def reset(self, env: NavEnv, rng: np.random.Generator) -> None: ...

    def act(self, env: NavEnv, rng: np.random.Generator) -> Action: ...


def run_episode(env: NavEnv, policy: Policy, seed: int | np.random.Generator, start_pose: Pose | None = None,
                episode_id: int = 0) -> Trajectory:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    env.reset(start_pose, rng)
    policy.reset(env, rng)
    while not env.state.done:
        env.step(policy.act(env, rng))
    return env.trajectory(episode_id)
