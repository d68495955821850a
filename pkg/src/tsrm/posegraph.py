"""Directed pose graph with unit action edges and multi-source distance fields."""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actions import MOTION_ACTIONS, Action
from .perception import visible
from .scene import ObjectInstance, Pose, Scene, dumps_scene


class _Unreachable:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "UNREACHABLE"

    def __reduce__(self):
        return (_Unreachable, ())


UNREACHABLE = _Unreachable()


class TargetUnreachableError(Exception):
    pass


_MOVE = {0: (1, 0), 90: (0, 1), 180: (-1, 0), 270: (0, -1)}


@dataclass(eq=False)
class PoseGraph:
    """States are (cell, yaw, pitch) indexed densely; ``succ[s, a]`` is the
    successor of state ``s`` under motion action ``a`` or -1 if the edge is
    absent (wall ahead, or gaze already at its limit)."""

    scene: Scene
    cells: list[tuple[int, int]]
    yaws: list[int]
    pitches: list[int]
    succ: np.ndarray
    _cell_index: dict[tuple[int, int], int] = field(repr=False, default_factory=dict)
    _fields: dict = field(repr=False, default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.succ.shape[0]

    def state_of(self, pose: Pose) -> int:
        c = self._cell_index[(pose.i, pose.j)]
        return (c * len(self.yaws) + self.yaws.index(pose.yaw)) * len(self.pitches) + self.pitches.index(pose.pitch)

    def pose_of(self, s: int) -> Pose:
        c, r = divmod(int(s), len(self.yaws) * len(self.pitches))
        y, p = divmod(r, len(self.pitches))
        i, j = self.cells[c]
        return Pose(i, j, self.yaws[y], self.pitches[p])

    def has_cell(self, cell: tuple[int, int]) -> bool:
        return cell in self._cell_index

    def cell_index(self, cell: tuple[int, int]) -> int:
        return self._cell_index[cell]

    def next_state(self, s: int, action: Action) -> int:
        return int(self.succ[s, int(action)])

    def edges(self) -> set[tuple[int, int, int]]:
        us, acts = np.nonzero(self.succ >= 0)
        return {(int(u), int(a), int(self.succ[u, a])) for u, a in zip(us, acts)}

    def predecessors(self) -> list[list[int]]:
        pred: list[list[int]] = [[] for _ in range(self.n_states)]
        us, acts = np.nonzero(self.succ >= 0)
        for u, v in zip(us.tolist(), self.succ[us, acts].tolist()):
            pred[v].append(u)
        return pred

    def distance_field(self, target: ObjectInstance) -> "DistanceField":
        """Memoised :func:`distance_field`."""
        key = (target.category, target.position)
        if key not in self._fields:
            self._fields[key] = distance_field(self, target)
        return self._fields[key]


def reverse_edges(edges: set[tuple[int, int, int]]) -> set[tuple[int, int, int]]:
    return {(v, a, u) for u, a, v in edges}


def build_graph(scene: Scene) -> PoseGraph:
    cfg = scene.config
    cells = sorted(scene.reachable_cells)
    index = {c: k for k, c in enumerate(cells)}
    yaws = [k * cfg.rot_step for k in range(cfg.n_yaws)]
    pitches = list(cfg.pitch_levels)
    ny, npch = len(yaws), len(pitches)
    succ = np.full((len(cells) * ny * npch, len(MOTION_ACTIONS)), -1, dtype=np.int64)

    def sid(c, y, p):
        return (c * ny + y) * npch + p

    for c, (i, j) in enumerate(cells):
        for y, yaw in enumerate(yaws):
            di, dj = _MOVE[yaw]
            fwd = index.get((i + di, j + dj))
            for p in range(npch):
                s = sid(c, y, p)
                if fwd is not None:
                    succ[s, Action.MOVE_AHEAD] = sid(fwd, y, p)
                if ny > 1:
                    succ[s, Action.ROTATE_LEFT] = sid(c, (y + 1) % ny, p)
                    succ[s, Action.ROTATE_RIGHT] = sid(c, (y - 1) % ny, p)
                if p + 1 < npch:
                    succ[s, Action.LOOK_DOWN] = sid(c, y, p + 1)
                if p > 0:
                    succ[s, Action.LOOK_UP] = sid(c, y, p - 1)
    return PoseGraph(scene, cells, yaws, pitches, succ, index)


def terminal_mask(graph: PoseGraph, target: ObjectInstance) -> np.ndarray:
    scene = graph.scene
    r = scene.config.success_radius
    tx, ty = target.position.x, target.position.y
    mask = np.zeros(graph.n_states, dtype=bool)
    for c, (i, j) in enumerate(graph.cells):
        cx, cy = scene.cell_center(i, j)
        if (cx - tx) ** 2 + (cy - ty) ** 2 > r * r + 1e-12:
            continue
        for yaw in graph.yaws:
            for pitch in graph.pitches:
                pose = Pose(i, j, yaw, pitch)
                if visible(pose, target, scene, occlusion_check=True):
                    mask[graph.state_of(pose)] = True
    return mask


def success_terminals(graph: PoseGraph, target: ObjectInstance) -> set[Pose]:
    """Poses within the success radius of ``target`` that also see it.  May be empty."""
    return {graph.pose_of(s) for s in np.flatnonzero(terminal_mask(graph, target))}


@dataclass(eq=False)
class DistanceField:
    target: ObjectInstance
    dist: np.ndarray  # -1 encodes unreachable
    terminals: np.ndarray  # bool mask over states
    graph: PoseGraph = field(repr=False)

    def __getitem__(self, key: Pose | int):
        s = key if isinstance(key, (int, np.integer)) else self.graph.state_of(key)
        d = int(self.dist[s])
        return UNREACHABLE if d < 0 else d

    def is_terminal(self, key: Pose | int) -> bool:
        s = key if isinstance(key, (int, np.integer)) else self.graph.state_of(key)
        return bool(self.terminals[s])


def multi_source_bfs(graph: PoseGraph, sources: np.ndarray) -> np.ndarray:
    """Reverse breadth-first sweep from every source state at once."""
    pred = graph.predecessors()
    dist = np.full(graph.n_states, -1, dtype=np.int64)
    q = deque()
    for s in np.flatnonzero(sources).tolist():
        dist[s] = 0
        q.append(s)
    while q:
        v = q.popleft()
        dv = dist[v] + 1
        for u in pred[v]:
            if dist[u] < 0:
                dist[u] = dv
                q.append(u)
    return dist


def distance_field(graph: PoseGraph, target: ObjectInstance) -> DistanceField:
    mask = terminal_mask(graph, target)
    if not mask.any():
        raise TargetUnreachableError(
            f"target unreachable: no pose in scene {graph.scene.id} sees {target.category} within success radius")
    return DistanceField(target, multi_source_bfs(graph, mask), mask, graph)


def metric_shortest_path(scene: Scene, from_cell: tuple[int, int], to_cells) -> float | _Unreachable:
    """4-connected hop count times grid step; rotations cost nothing."""
    goals = set(to_cells)
    if not goals:
        raise ValueError("to_cells must be non-empty")
    reach = scene.reachable_cells
    if from_cell not in reach:
        raise ValueError(f"cell {from_cell} is not reachable")
    if from_cell in goals:
        return 0.0
    seen = {from_cell}
    q = deque([(from_cell, 0)])
    while q:
        (i, j), d = q.popleft()
        for n in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if n in reach and n not in seen:
                if n in goals:
                    return (d + 1) * scene.config.grid_step
                seen.add(n)
                q.append((n, d + 1))
    return UNREACHABLE


# ------------------------------------------------------------------ caching

def config_hash(scene: Scene) -> str:
    return hashlib.sha256(dumps_scene(scene).encode("utf-8")).hexdigest()[:16]


def cached_distance_field(graph: PoseGraph, target: ObjectInstance, cache_dir: str | Path) -> DistanceField:
    """Distance field backed by an ``.npz`` cache; stale entries are rebuilt."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{graph.scene.id}__{target.category}.npz"
    h = config_hash(graph.scene)
    if path.exists():
        with np.load(path) as z:
            if str(z["hash"]) == h and z["dist"].shape[0] == graph.n_states:
                return DistanceField(target, z["dist"].copy(), z["terminals"].copy(), graph)
    df = distance_field(graph, target)
    np.savez(path, hash=np.array(h), dist=df.dist, terminals=df.terminals)
    return df


def forward_bfs(graph: PoseGraph, start: int, stop=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Level-synchronous BFS from one state.

    Returns ``(dist, parent, via)`` where ``via[s]`` is the action taken
    from ``parent[s]``; both are -1 for the start and unreached states.
    Among equal-length paths the lowest action index wins.  ``stop(dist,
    level)`` is polled after each completed level and may end the sweep early.
    """
    n = graph.n_states
    dist = np.full(n, -1, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    via = np.full(n, -1, dtype=np.int64)
    dist[start] = 0
    frontier = np.array([start], dtype=np.int64)
    level = 0
    succ = graph.succ
    acts = np.arange(succ.shape[1], dtype=np.int64)
    while frontier.size:
        level += 1
        dst = succ[frontier].ravel()
        src = np.repeat(frontier, succ.shape[1])
        act = np.tile(acts, frontier.size)
        ok = dst >= 0
        ok[ok] = dist[dst[ok]] < 0
        src, dst, act = src[ok], dst[ok], act[ok]
        if not dst.size:
            break
        # deterministic tie-break: smallest action, then smallest parent
        order = np.lexsort((src, act, dst))
        dst, src, act = dst[order], src[order], act[order]
        first = np.ones(dst.size, dtype=bool)
        first[1:] = dst[1:] != dst[:-1]
        dst, src, act = dst[first], src[first], act[first]
        dist[dst] = level
        parent[dst] = src
        via[dst] = act
        frontier = dst
        if stop is not None and stop(dist, level):
            break
    return dist, parent, via


def extract_actions(parent: np.ndarray, via: np.ndarray, goal: int) -> list[Action]:
    acts = []
    s = goal
    while parent[s] >= 0:
        acts.append(Action(int(via[s])))
        s = int(parent[s])
    return acts[::-1]
