"""Hand-written policies: uniform random, a privileged oracle, and a
coverage-then-approach heuristic that only knows the floor map."""

from __future__ import annotations

import math

import numpy as np

from .actions import MOTION_ACTIONS, Action
from .geometry import Point2
from .metrics import criterion_mask
from .perception import line_of_sight, view_frustum, visible
from .posegraph import PoseGraph, TargetUnreachableError, extract_actions, forward_bfs, multi_source_bfs
from .reward import NavEnv, Stage

_PREFERENCE = (Action.MOVE_AHEAD, Action.ROTATE_LEFT, Action.ROTATE_RIGHT, Action.LOOK_DOWN, Action.LOOK_UP)


class RandomPolicy:
    """Uniform over motion actions; emits Done with probability ``done_prob``."""

    def __init__(self, done_prob: float = 0.02):
        self.done_prob = done_prob

    def reset(self, env: NavEnv, rng: np.random.Generator) -> None:
        pass

    def act(self, env: NavEnv, rng: np.random.Generator) -> Action:
        if rng.random() < self.done_prob:
            return Action.DONE
        return MOTION_ACTIONS[int(rng.integers(len(MOTION_ACTIONS)))]


def greedy_step(graph: PoseGraph, dist: np.ndarray, s: int) -> Action | None:
    """An action that lowers ``dist`` by one, or None at a source."""
    d = dist[s]
    if d <= 0:
        return None
    for a in _PREFERENCE:
        n = graph.succ[s, a]
        if n >= 0 and dist[n] == d - 1:
            return a
    raise RuntimeError(f"distance field is not Bellman-consistent at state {s}")


class OraclePolicy:
    """Privileged upper bound.

    While searching it walks the shortest action path to the nearest pose
    meeting the dividing criterion; once pathfinding it descends the
    target's distance field and calls Done on arrival.  Never collides.
    """

    def __init__(self):
        self._search_dist: np.ndarray | None = None

    def reset(self, env: NavEnv, rng: np.random.Generator) -> None:
        if env.field.dist[env.graph.state_of(env.state.start_pose)] < 0:
            raise TargetUnreachableError("oracle start pose cannot reach the target")
        crit = criterion_mask(env.graph, env.target, env.detector_cfg, env.reward_cfg.c_target)
        self._search_dist = multi_source_bfs(env.graph, crit) if crit.any() else None

    def act(self, env: NavEnv, rng: np.random.Generator) -> Action:
        s = env.graph.state_of(env.state.pose)
        if env.state.stage is Stage.SEARCHING and self._search_dist is not None and self._search_dist[s] > 0:
            a = greedy_step(env.graph, self._search_dist, s)
            if a is not None:
                return a
        a = greedy_step(env.graph, env.field.dist, s)
        return Action.DONE if a is None else a


class _CoverageMap:
    """Which cells each (cell, yaw) pose sees with a level gaze (no occlusion)."""

    def __init__(self, graph: PoseGraph):
        scene = graph.scene
        cfg = scene.config
        near, far = cfg.near_far(0)
        tan = math.tan(math.radians(cfg.fov_half_angle))
        cx = np.array([scene.cell_center(i, j)[0] for i, j in graph.cells])
        cy = np.array([scene.cell_center(i, j)[1] for i, j in graph.cells])
        dx = cx[None, :] - cx[:, None]
        dy = cy[None, :] - cy[:, None]
        self.n_yaws = len(graph.yaws)
        rows = []
        for yaw in graph.yaws:
            c, s = round(math.cos(math.radians(yaw))), round(math.sin(math.radians(yaw)))
            fwd = dx * c + dy * s
            lat = -dx * s + dy * c
            rows.append((fwd >= near) & (fwd <= far) & (np.abs(lat) <= fwd * tan + 1e-9))
        # index: cell * n_yaws + yaw_index
        self.sees = np.stack(rows, axis=1).reshape(len(graph.cells) * self.n_yaws, len(graph.cells))
        self.sees_f = self.sees.astype(np.float64)
        # state index of every (cell, yaw) pose at level gaze, same row order
        level = graph.pitches.index(0)
        self.level_states = np.arange(level, graph.n_states, len(graph.pitches))

    @classmethod
    def of(cls, graph: PoseGraph) -> "_CoverageMap":
        key = ("coverage-map",)
        if key not in graph._fields:
            graph._fields[key] = cls(graph)
        return graph._fields[key]


class CoveragePolicy:
    """Map-aware but target-blind two-stage heuristic.

    Searching: greedily head for the pose with the best ratio of unseen
    cells to travel cost.  At the dividing point the agent fixes an estimate
    of the target position: the true one if the target is actually in view,
    otherwise a spurious point in the middle of the current view.  It then
    travels to a pose that would see the estimate within the success radius
    and calls Done.
    """

    def __init__(self):
        self._plan: list[Action] = []
        self._goal_fixed = False

    def _map(self, graph: PoseGraph) -> _CoverageMap:
        return _CoverageMap.of(graph)

    def reset(self, env: NavEnv, rng: np.random.Generator) -> None:
        self._unseen = np.ones(len(env.graph.cells), dtype=bool)
        self._plan = []
        self._goal_fixed = False
        self._mark(env)

    def _mark(self, env: NavEnv) -> None:
        p = env.state.pose
        cm = self._map(env.graph)
        row = env.graph.cell_index(p.cell) * cm.n_yaws + env.graph.yaws.index(p.yaw)
        self._unseen &= ~cm.sees[row]

    def _explore_plan(self, env: NavEnv, rng: np.random.Generator) -> list[Action]:
        g = env.graph
        cm = self._map(g)
        s = g.state_of(env.state.pose)
        level_states = cm.level_states
        gains = cm.sees_f @ self._unseen
        gmax = gains.max()

        def good_enough(dist, level):
            d = dist[level_states]
            ok = (d >= 0) & (gains > 0)
            # states first reached later score at most gmax / (2 + level)
            return ok.any() and np.max(np.where(ok, gains / (1.0 + np.maximum(d, 0)), -1.0)) > gmax / (2.0 + level)

        dist, parent, via = forward_bfs(g, s, stop=good_enough if gmax > 0 else None)
        d = dist[level_states]
        ok = (d >= 0) & (gains > 0)
        if not ok.any():
            return [MOTION_ACTIONS[int(rng.integers(len(MOTION_ACTIONS)))]]
        score = np.where(ok, gains / (1.0 + np.maximum(d, 0)), -1.0)
        best = int(level_states[int(np.argmax(score))])
        plan = extract_actions(parent, via, best)
        return plan[:4] if plan else [Action.ROTATE_LEFT]

    def _approach_plan(self, env: NavEnv) -> list[Action]:
        g = env.graph
        scene = env.scene
        pose = env.state.pose
        if visible(pose, env.target, scene, env.detector_cfg.occlusion_check):
            ex, ey = env.target.position.x, env.target.position.y
        else:
            fr = view_frustum(pose, scene)
            mid = 0.5 * (fr.near + fr.far)
            h = math.radians(fr.heading)
            ex, ey = fr.apex.x + mid * round(math.cos(h)), fr.apex.y + mid * round(math.sin(h))
        est = Point2(ex, ey)
        r = scene.config.success_radius
        goals = np.zeros(g.n_states, dtype=bool)
        for s in range(g.n_states):
            q = g.pose_of(s)
            cx, cy = scene.cell_center(q.i, q.j)
            if (cx - ex) ** 2 + (cy - ey) ** 2 > r * r + 1e-12:
                continue
            if view_frustum(q, scene).contains(ex, ey) and line_of_sight(scene, q, est):
                goals[s] = True
        start = g.state_of(pose)
        if goals[start]:
            return [Action.DONE]
        dist, parent, via = forward_bfs(g, start)
        cand = np.flatnonzero(goals & (dist >= 0))
        if not cand.size:
            return [Action.DONE]
        best = int(cand[np.argmin(dist[cand])])
        return extract_actions(parent, via, best) + [Action.DONE]

    def act(self, env: NavEnv, rng: np.random.Generator) -> Action:
        self._mark(env)
        if env.state.stage is Stage.PATHFINDING:
            if not self._goal_fixed:
                self._plan = self._approach_plan(env)
                self._goal_fixed = True
            return self._plan.pop(0) if self._plan else Action.DONE
        if not self._plan:
            self._plan = self._explore_plan(env, rng)
        return self._plan.pop(0)


BUILTIN_POLICIES = {"random": RandomPolicy, "oracle": OraclePolicy, "coverage": CoveragePolicy}


def make_builtin(name: str):
    try:
        return BUILTIN_POLICIES[name]()
    except KeyError:
        raise ValueError(f"unknown builtin policy {name!r}; choose from {sorted(BUILTIN_POLICIES)}") from None

