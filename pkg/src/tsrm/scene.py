"""Scene model, procedural generation and the JSON scene file format."""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
import shapely

from .geometry import GeometryError, Point2, Polygon


class SceneError(Exception):
    pass


class SceneParseError(SceneError):
    pass


class SceneValidationError(SceneError):
    pass


class GenerationError(SceneError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    grid_step: float = 0.25
    rot_step: int = 90
    # AI2-Thor horizon convention: positive pitch looks down
    pitch_levels: tuple[int, ...] = (-30, 0, 30)
    fov_half_angle: float = 45.0
    # (pitch, near, far); downward gaze uses the overhead trapezoid
    frustum_near_far: tuple[tuple[int, float, float], ...] = ((-30, 1.0, 4.0), (0, 1.0, 4.0), (30, 0.25, 3.0))
    success_radius: float = 1.0
    max_episode_length: int = 100

    def __post_init__(self):
        if not self.grid_step > 0:
            raise SceneValidationError(f"gridStep must be > 0, got {self.grid_step}")
        if self.rot_step <= 0 or 360 % self.rot_step or self.rot_step % 90:
            raise SceneValidationError(f"rotStep must divide 360 and be a multiple of 90, got {self.rot_step}")
        p = list(self.pitch_levels)
        if not p or any(b <= a for a, b in zip(p, p[1:])) or 0 not in p:
            raise SceneValidationError(f"pitchLevels must be strictly increasing and contain 0, got {p}")
        if not (0 < self.fov_half_angle < 90):
            raise SceneValidationError(f"fovHalfAngle must be in (0, 90), got {self.fov_half_angle}")
        nf = {int(q): (float(n), float(f)) for q, n, f in self.frustum_near_far}
        for q in p:
            if q not in nf:
                raise SceneValidationError(f"frustumNearFar has no entry for pitch {q}")
            n, f = nf[q]
            if not (0 < n < f):
                raise SceneValidationError(f"frustumNearFar for pitch {q} needs 0 < near < far")
        if not self.success_radius > 0:
            raise SceneValidationError(f"successRadius must be > 0, got {self.success_radius}")
        if self.max_episode_length < 1:
            raise SceneValidationError("maxEpisodeLength must be >= 1")

    @property
    def n_yaws(self) -> int:
        return 360 // self.rot_step

    def near_far(self, pitch: int) -> tuple[float, float]:
        for q, n, f in self.frustum_near_far:
            if q == pitch:
                return float(n), float(f)
        raise KeyError(pitch)


@dataclass(frozen=True)
class ObjectInstance:
    category: str
    position: Point2

    def __post_init__(self):
        if not self.category:
            raise SceneValidationError("object category must be non-empty")


class Pose(NamedTuple):
    i: int
    j: int
    yaw: int
    pitch: int

    @property
    def cell(self) -> tuple[int, int]:
        return (self.i, self.j)


Rect = tuple[float, float, float, float]


def _cells_inside(room: Polygon, obstacles: tuple[Rect, ...], g: float) -> frozenset[tuple[int, int]]:
    xs = [x for x, _ in room.outer]
    ys = [y for _, y in room.outer]
    ni, nj = int(math.ceil(max(xs) / g)), int(math.ceil(max(ys) / g))
    if ni <= 0 or nj <= 0:
        return frozenset()
    ii, jj = np.meshgrid(np.arange(ni), np.arange(nj), indexing="ij")
    cx, cy = (ii + 0.5) * g, (jj + 0.5) * g
    inside = shapely.contains_xy(room.to_shapely(), cx, cy)
    for x0, y0, x1, y1 in obstacles:
        inside &= ~((cx > x0) & (cx < x1) & (cy > y0) & (cy < y1))
    return frozenset((int(a), int(b)) for a, b in zip(ii[inside], jj[inside]))


@dataclass(frozen=True)
class Scene:
    id: str
    config: SceneConfig
    room_bounds: Polygon
    obstacles: tuple[Rect, ...] = ()
    objects: tuple[ObjectInstance, ...] = ()
    reachable_cells: frozenset[tuple[int, int]] = field(init=False, repr=False)

    def __post_init__(self):
        xs = [x for x, _ in self.room_bounds.outer]
        ys = [y for _, y in self.room_bounds.outer]
        if min(xs) < 0 or min(ys) < 0:
            raise SceneValidationError("roomBounds must lie in the non-negative quadrant")
        room = self.room_bounds.to_shapely()
        for k, r in enumerate(self.obstacles):
            x0, y0, x1, y1 = r
            if not (x0 < x1 and y0 < y1):
                raise SceneValidationError(f"obstacles[{k}] is degenerate: {r}")
            if not room.covers(shapely.box(x0, y0, x1, y1)):
                raise SceneValidationError(f"obstacles[{k}] covers cells outside roomBounds")
        for k, o in enumerate(self.objects):
            if not room.covers(shapely.Point(o.position.x, o.position.y)):
                raise SceneValidationError(f"objects[{k}] ({o.category}) lies outside roomBounds")
        cells = _cells_inside(self.room_bounds, self.obstacles, self.config.grid_step)
        if not cells:
            raise SceneValidationError("scene has no reachable cell")
        object.__setattr__(self, "reachable_cells", cells)

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        g = self.config.grid_step
        return ((i + 0.5) * g, (j + 0.5) * g)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        g = self.config.grid_step
        return (int(math.floor(x / g)), int(math.floor(y / g)))

    def object(self, category: str) -> ObjectInstance:
        for o in self.objects:
            if o.category == category:
                return o
        raise KeyError(f"no object of category {category!r} in scene {self.id}")

    def room_area(self) -> float:
        return self.room_bounds.area()


def pose_to_world(pose: Pose, config: SceneConfig) -> tuple[Point2, float]:
    g = config.grid_step
    return Point2((pose.i + 0.5) * g, (pose.j + 0.5) * g), float(pose.yaw)


def connected_components(cells: frozenset[tuple[int, int]] | set[tuple[int, int]]) -> list[set[tuple[int, int]]]:
    """4-connected flood fill."""
    left = set(cells)
    comps = []
    while left:
        seed = min(left)
        comp = {seed}
        left.discard(seed)
        q = deque([seed])
        while q:
            i, j = q.popleft()
            for n in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
                if n in left:
                    left.discard(n)
                    comp.add(n)
                    q.append(n)
        comps.append(comp)
    return comps


# ---------------------------------------------------------------- generation

DEFAULT_CATEGORIES = (
    "Apple", "Book", "Bowl", "Chair", "Laptop", "Mug", "Pillow", "Plant",
    "RemoteControl", "Television", "Toaster", "Vase",
)


@dataclass(frozen=True)
class GenerationParams:
    width_range: tuple[float, float] = (4.0, 8.0)
    depth_range: tuple[float, float] = (4.0, 8.0)
    size_quantum: float = 0.5
    notch_prob: float = 0.5
    obstacle_count: tuple[int, int] = (0, 3)
    obstacle_size: tuple[float, float] = (0.5, 1.5)
    object_count: tuple[int, int] = (1, 3)
    categories: tuple[str, ...] = DEFAULT_CATEGORIES
    max_retries: int = 50
    config: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self):
        lo, hi = self.width_range
        if not (0 < lo <= hi):
            raise ValueError(f"bad width_range {self.width_range}")
        lo, hi = self.depth_range
        if not (0 < lo <= hi):
            raise ValueError(f"bad depth_range {self.depth_range}")
        a, b = self.obstacle_count
        if not (0 <= a <= b):
            raise ValueError(f"bad obstacle_count {self.obstacle_count}")
        a, b = self.object_count
        if not (1 <= a <= b):
            raise ValueError(f"bad object_count {self.object_count}")
        if b > len(self.categories):
            raise ValueError("object_count exceeds the number of distinct categories")
        if self.size_quantum <= 0 or not 0 <= self.notch_prob <= 1:
            raise ValueError("bad size_quantum or notch_prob")
        q = self.size_quantum / self.config.grid_step
        if abs(q - round(q)) > 1e-9:
            raise ValueError("size_quantum must be a multiple of gridStep")


def _quantized(rng: np.random.Generator, lo: float, hi: float, q: float) -> float:
    a, b = int(math.ceil(lo / q - 1e-9)), int(math.floor(hi / q + 1e-9))
    if b < a:
        b = a
    return float(rng.integers(a, b + 1)) * q


def _room_outline(rng: np.random.Generator, p: GenerationParams) -> Polygon:
    w = _quantized(rng, *p.width_range, p.size_quantum)
    d = _quantized(rng, *p.depth_range, p.size_quantum)
    if rng.random() < p.notch_prob and min(w, d) >= 3 * p.size_quantum:
        nw = _quantized(rng, p.size_quantum, w / 2, p.size_quantum)
        nd = _quantized(rng, p.size_quantum, d / 2, p.size_quantum)
        corner = int(rng.integers(4))
        # L-shaped room: rectangle minus one corner notch
        if corner == 0:
            verts = [(nw, 0), (w, 0), (w, d), (0, d), (0, nd), (nw, nd)]
        elif corner == 1:
            verts = [(0, 0), (w - nw, 0), (w - nw, nd), (w, nd), (w, d), (0, d)]
        elif corner == 2:
            verts = [(0, 0), (w, 0), (w, d - nd), (w - nw, d - nd), (w - nw, d), (0, d)]
        else:
            verts = [(0, 0), (w, 0), (w, d), (nw, d), (nw, d - nd), (0, d - nd)]
        return Polygon.from_vertices(verts)
    return Polygon.rectangle(0.0, 0.0, w, d)


def generate_scene(seed: int, params: GenerationParams | None = None, scene_id: str | None = None) -> Scene:
    """Deterministic rectilinear room with rectangular obstacles and objects.

    Every object is guaranteed a non-empty success-terminal set.  Raises
    GenerationError when no valid layout is found within ``max_retries``.
    """
    from .posegraph import build_graph, success_terminals

    p = params or GenerationParams()
    g = p.config.grid_step
    rng = np.random.default_rng(seed)
    sid = scene_id or f"scene-{seed}"
    for _ in range(p.max_retries):
        room = _room_outline(rng, p)
        shp = room.to_shapely()
        xs = [x for x, _ in room.outer]
        ys = [y for _, y in room.outer]
        w, d = max(xs), max(ys)
        obstacles = []
        for _k in range(int(rng.integers(p.obstacle_count[0], p.obstacle_count[1] + 1))):
            for _try in range(20):
                ow = _quantized(rng, *p.obstacle_size, g)
                od = _quantized(rng, *p.obstacle_size, g)
                if ow >= w or od >= d:
                    continue
                x0 = float(rng.integers(0, int(round((w - ow) / g)) + 1)) * g
                y0 = float(rng.integers(0, int(round((d - od) / g)) + 1)) * g
                if shp.covers(shapely.box(x0, y0, x0 + ow, y0 + od)):
                    obstacles.append((x0, y0, x0 + ow, y0 + od))
                    break
        cells = _cells_inside(room, tuple(obstacles), g)
        if not cells or len(connected_components(cells)) != 1:
            continue
        n_obj = int(rng.integers(p.object_count[0], p.object_count[1] + 1))
        cats = [p.categories[k] for k in rng.permutation(len(p.categories))[:n_obj]]
        objects = []
        for cat in cats:
            for _try in range(50):
                x = round(float(rng.uniform(0.15, w - 0.15)), 2)
                y = round(float(rng.uniform(0.15, d - 0.15)), 2)
                if shp.contains(shapely.Point(x, y)):
                    objects.append(ObjectInstance(cat, Point2(x, y)))
                    break
        if len(objects) != n_obj:
            continue
        try:
            scene = Scene(sid, p.config, room, tuple(obstacles), tuple(objects))
        except (SceneValidationError, GeometryError):
            continue
        graph = build_graph(scene)
        if all(success_terminals(graph, o) for o in scene.objects):
            return scene
    raise GenerationError(f"no valid scene for seed {seed} after {p.max_retries} attempts")


# ------------------------------------------------------------------ file I/O

def scene_to_dict(scene: Scene) -> dict[str, Any]:
    c = scene.config
    return {
        "id": scene.id,
        "config": {
            "gridStep": c.grid_step,
            "rotStep": c.rot_step,
            "pitchLevels": list(c.pitch_levels),
            "fovHalfAngle": c.fov_half_angle,
            "frustumNearFar": [[q, n, f] for q, n, f in c.frustum_near_far],
            "successRadius": c.success_radius,
            "maxEpisodeLength": c.max_episode_length,
        },
        "roomBounds": [[x, y] for x, y in scene.room_bounds.outer],
        "obstacles": [list(r) for r in scene.obstacles],
        "objects": [{"category": o.category, "x": o.position.x, "y": o.position.y} for o in scene.objects],
    }


def dumps_scene(scene: Scene) -> str:
    # json writes floats with repr(), which round-trips exactly
    return json.dumps(scene_to_dict(scene), indent=2) + "\n"


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(dumps_scene(scene), encoding="utf-8")


def _get(d: Any, key: str, where: str, kind: type | tuple[type, ...]):
    if not isinstance(d, dict) or key not in d:
        raise SceneParseError(f"missing field '{where}{key}'")
    v = d[key]
    if kind is float:
        kind = (int, float)
    if isinstance(v, bool) or not isinstance(v, kind):
        raise SceneParseError(f"field '{where}{key}' has wrong type {type(v).__name__}")
    return v


def _num(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SceneParseError(f"field '{where}' must be a number")
    return float(v)


def scene_from_dict(d: Any) -> Scene:
    if not isinstance(d, dict):
        raise SceneParseError("scene file must contain a JSON object")
    sid = _get(d, "id", "", str)
    c = _get(d, "config", "", dict)
    try:
        cfg = SceneConfig(
            grid_step=float(_get(c, "gridStep", "config.", float)),
            rot_step=int(_get(c, "rotStep", "config.", int)),
            pitch_levels=tuple(int(_num(v, "config.pitchLevels")) for v in _get(c, "pitchLevels", "config.", list)),
            fov_half_angle=float(_get(c, "fovHalfAngle", "config.", float)),
            frustum_near_far=tuple(_near_far_entry(e) for e in _get(c, "frustumNearFar", "config.", list)),
            success_radius=float(_get(c, "successRadius", "config.", float)),
            max_episode_length=int(_get(c, "maxEpisodeLength", "config.", int)),
        )
    except TypeError as e:
        raise SceneParseError(f"malformed config: {e}") from e
    verts = _get(d, "roomBounds", "", list)
    pts = []
    for k, v in enumerate(verts):
        if not isinstance(v, list) or len(v) != 2:
            raise SceneParseError(f"field 'roomBounds[{k}]' must be [x, y]")
        pts.append((_num(v[0], f"roomBounds[{k}]"), _num(v[1], f"roomBounds[{k}]")))
    try:
        room = Polygon.from_vertices(pts)
    except GeometryError as e:
        raise SceneValidationError(f"roomBounds: {e}") from e
    obstacles = []
    for k, r in enumerate(_get(d, "obstacles", "", list)):
        if not isinstance(r, list) or len(r) != 4:
            raise SceneParseError(f"field 'obstacles[{k}]' must be [x0, y0, x1, y1]")
        obstacles.append(tuple(_num(v, f"obstacles[{k}]") for v in r))
    objects = []
    for k, o in enumerate(_get(d, "objects", "", list)):
        where = f"objects[{k}]."
        cat = _get(o, "category", where, str)
        x = float(_get(o, "x", where, float))
        y = float(_get(o, "y", where, float))
        try:
            objects.append(ObjectInstance(cat, Point2(x, y)))
        except GeometryError as e:
            raise SceneValidationError(f"{where}: {e}") from e
    return Scene(sid, cfg, room, tuple(obstacles), tuple(objects))


def _near_far_entry(e: Any) -> tuple[int, float, float]:
    if not isinstance(e, list) or len(e) != 3:
        raise SceneParseError("field 'config.frustumNearFar' entries must be [pitch, near, far]")
    return (int(_num(e[0], "config.frustumNearFar")), _num(e[1], "config.frustumNearFar"),
            _num(e[2], "config.frustumNearFar"))


def loads_scene(text: str) -> Scene:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise SceneParseError(f"invalid or truncated scene JSON: {e}") from e
    return scene_from_dict(d)


def load_scene(path: str | Path) -> Scene:
    return loads_scene(Path(path).read_text(encoding="utf-8"))
