"""Independent oracles for the acceptance suite.

Nothing here calls into the code paths it checks: area estimates use their
own point-in-polygon test, distances use forward searches with their own
terminal predicate (own frustum and own segment/box line-of-sight test).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Polygon, Region
from .posegraph import UNREACHABLE  # shared sentinel value only


class OracleRefusal(Exception):
    pass


# ------------------------------------------------------------- Monte-Carlo area

@dataclass(frozen=True)
class Union_:
    parts: tuple


@dataclass(frozen=True)
class Intersection_:
    parts: tuple


def _rings_of(shape) -> list[list[tuple[float, float]]]:
    if isinstance(shape, Polygon):
        return [list(r) for r in shape.rings]
    if isinstance(shape, Region):
        out = []
        for p in shape.polygons:
            out.extend(list(r) for r in p.rings)
        return out
    raise TypeError(type(shape))


def _inside_rings(rings, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Even-odd crossing rule over all rings (holes cancel naturally)."""
    inside = np.zeros(x.shape, dtype=bool)
    for ring in rings:
        n = len(ring)
        for k in range(n):
            x0, y0 = ring[k]
            x1, y1 = ring[(k + 1) % n]
            if y0 == y1:
                continue
            cond = (y0 > y) != (y1 > y)
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= cond & (x < xc)
    return inside


def _member(shape, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if isinstance(shape, Union_):
        m = np.zeros(x.shape, dtype=bool)
        for p in shape.parts:
            m |= _member(p, x, y)
        return m
    if isinstance(shape, Intersection_):
        m = np.ones(x.shape, dtype=bool)
        for p in shape.parts:
            m &= _member(p, x, y)
        return m
    return _inside_rings(_rings_of(shape), x, y)


def _bbox(shape) -> tuple[float, float, float, float] | None:
    if isinstance(shape, (Union_, Intersection_)):
        boxes = [_bbox(p) for p in shape.parts]
        if isinstance(shape, Union_):
            boxes = [b for b in boxes if b is not None]
            if not boxes:
                return None
            return (min(b[0] for b in boxes), min(b[1] for b in boxes),
                    max(b[2] for b in boxes), max(b[3] for b in boxes))
        if any(b is None for b in boxes):
            return None
        b = (max(b[0] for b in boxes), max(b[1] for b in boxes),
             min(b[2] for b in boxes), min(b[3] for b in boxes))
        return b if b[0] < b[2] and b[1] < b[3] else None
    pts = [p for r in _rings_of(shape) for p in r]
    if not pts:
        return None
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    return (min(xs), min(ys), max(xs), max(ys))


def mc_area(shape, samples: int = 1_000_000, seed: int = 0, stratified: bool = True) -> tuple[float, float]:
    """Hit-count area estimate over the bounding box, with its standard error.

    ``shape`` is a Polygon, Region, or a Union_/Intersection_ expression of
    those.  ``stratified`` draws one jittered point per cell of a square
    lattice (still unbiased); the returned error is the iid binomial value,
    which bounds the stratified error from above.
    """
    if samples < 100_000:
        raise ValueError("mc_area needs at least 1e5 samples")
    box = _bbox(shape)
    if box is None:
        return 0.0, 0.0
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    rng = np.random.default_rng(seed)
    hits = 0
    if stratified:
        side = int(math.isqrt(samples))
        n = side * side
        for r0 in range(0, side, 250):
            rows = np.arange(r0, min(r0 + 250, side))
            gi, gj = np.meshgrid(rows, np.arange(side), indexing="ij")
            u = (gi + rng.random(gi.shape)) / side
            v = (gj + rng.random(gj.shape)) / side
            hits += int(_member(shape, x0 + u * w, y0 + v * h).sum())
    else:
        n = samples
        for k in range(0, n, 250_000):
            m = min(250_000, n - k)
            hits += int(_member(shape, x0 + rng.random(m) * w, y0 + rng.random(m) * h).sum())
    p = hits / n
    est = p * w * h
    err = w * h * math.sqrt(p * (1 - p) / n)
    return est, err


# ------------------------------------------------------------- pose oracles

def _trapezoid_vertices(cx, cy, yaw_deg, near, far, half_deg):
    h = math.radians(yaw_deg)
    fx, fy = math.cos(h), math.sin(h)
    lx, ly = -fy, fx
    t = math.tan(math.radians(half_deg))
    return [(cx + d * fx + s * d * t * lx, cy + d * fy + s * d * t * ly)
            for d, s in ((near, -1), (far, -1), (far, 1), (near, 1))]


def _in_convex(poly, px, py, tol=1e-9) -> bool:
    n = len(poly)
    sign = 0.0
    for k in range(n):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        cr = (ex * (py - ay) - ey * (px - ax)) / math.hypot(ex, ey)
        if sign == 0.0:
            sign = 1.0 if _area2(poly) > 0 else -1.0
        if cr * sign < -tol:
            return False
    return True


def _area2(poly) -> float:
    return sum(poly[k][0] * poly[(k + 1) % len(poly)][1] - poly[(k + 1) % len(poly)][0] * poly[k][1]
               for k in range(len(poly)))


def _segment_hits_box(x0, y0, x1, y1, bx0, by0, bx1, by1, tol=1e-12) -> bool:
    """Liang-Barsky clip of a segment against a closed axis-aligned box."""
    t0, t1 = 0.0, 1.0
    dx, dy = x1 - x0, y1 - y0
    for p, q in ((-dx, x0 - bx0 + tol), (dx, bx1 - x0 + tol), (-dy, y0 - by0 + tol), (dy, by1 - y0 + tol)):
        if p == 0:
            if q < 0:
                return False
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return False
    return True


def oracle_visible(scene, i, j, yaw, pitch, tx, ty) -> bool:
    cfg = scene.config
    g = cfg.grid_step
    cx, cy = (i + 0.5) * g, (j + 0.5) * g
    near = far = None
    for q, n, f in cfg.frustum_near_far:
        if q == pitch:
            near, far = n, f
    if not _in_convex(_trapezoid_vertices(cx, cy, yaw, near, far, cfg.fov_half_angle), tx, ty):
        return False
    # closed-square test in grid units, mirroring "segment touches cell"
    u0, v0, u1, v1 = cx / g, cy / g, tx / g, ty / g
    for a in range(math.floor(min(u0, u1)) - 1, math.floor(max(u0, u1)) + 2):
        for b in range(math.floor(min(v0, v1)) - 1, math.floor(max(v0, v1)) + 2):
            if (a, b) in scene.reachable_cells or (a, b) == (i, j):
                continue
            if a - 1e-12 <= u1 <= a + 1 + 1e-12 and b - 1e-12 <= v1 <= b + 1 + 1e-12:
                continue  # the target's own cell
            if _segment_hits_box(u0, v0, u1, v1, a, b, a + 1, b + 1):
                return False
    return True


def oracle_terminals(graph, target) -> set[int]:
    scene = graph.scene
    r = scene.config.success_radius
    tx, ty = target.position.x, target.position.y
    out = set()
    for s in range(graph.n_states):
        p = graph.pose_of(s)
        cx, cy = scene.cell_center(p.i, p.j)
        if math.hypot(cx - tx, cy - ty) <= r + 1e-12 and oracle_visible(scene, p.i, p.j, p.yaw, p.pitch, tx, ty):
            out.add(s)
    return out


def brute_distance(graph, target, state: int, terminals: set[int] | None = None):
    """Forward single-source BFS from ``state`` to the first terminal.

    Returns an int, or UNREACHABLE when no terminal can be reached.
    """
    term = oracle_terminals(graph, target) if terminals is None else terminals
    if state in term:
        return 0
    succ = graph.succ
    seen = {state}
    q = deque([(state, 0)])
    while q:
        s, d = q.popleft()
        for n in succ[s]:
            n = int(n)
            if n < 0 or n in seen:
                continue
            if n in term:
                return d + 1
            seen.add(n)
            q.append((n, d + 1))
    return UNREACHABLE


def brute_cell_path(scene, start_cell, goal_cells) -> float | None:
    """Dijkstra with unit weights over reachable cells; metres or None."""
    import heapq

    goals = set(goal_cells)
    best = {start_cell: 0}
    heap = [(0, start_cell)]
    while heap:
        d, c = heapq.heappop(heap)
        if c in goals:
            return d * scene.config.grid_step
        if d > best.get(c, math.inf):
            continue
        i, j = c
        for n in ((i, j + 1), (i + 1, j), (i, j - 1), (i - 1, j)):
            if n in scene.reachable_cells and d + 1 < best.get(n, math.inf):
                best[n] = d + 1
                heapq.heappush(heap, (d + 1, n))
    return None


def enumerate_optimal(graph, target, start: int, max_states: int = 2000, limit: int = 10_000) -> list[tuple[int, ...]]:
    """All shortest motion-action sequences from ``start`` into the terminal set.

    Refuses scenes larger than ``max_states`` and unreachable targets.
    """
    if graph.n_states > max_states:
        raise OracleRefusal(f"scene has {graph.n_states} states > {max_states}")
    term = oracle_terminals(graph, target)
    if start in term:
        return [()]
    succ = graph.succ
    level = {start: 0}
    q = deque([start])
    hit_depth = None
    while q:
        s = q.popleft()
        if hit_depth is not None and level[s] >= hit_depth:
            continue
        for a in range(succ.shape[1]):
            n = int(succ[s, a])
            if n >= 0 and n not in level:
                level[n] = level[s] + 1
                if n in term and hit_depth is None:
                    hit_depth = level[n]
                q.append(n)
    if hit_depth is None:
        raise OracleRefusal("UNREACHABLE: no terminal reachable from start")
    goals = [s for s in term if level.get(s) == hit_depth]
    back: dict[int, list[tuple[int, int]]] = {}
    for s, d in level.items():
        for a in range(succ.shape[1]):
            n = int(succ[s, a])
            if n >= 0 and level.get(n) == d + 1:
                back.setdefault(n, []).append((s, a))
    out: list[tuple[int, ...]] = []

    def walk(s: int, suffix: list[int]) -> None:
        if len(out) >= limit:
            return
        if s == start:
            out.append(tuple(reversed(suffix)))
            return
        for p, a in back.get(s, ()):
            suffix.append(a)
            walk(p, suffix)
            suffix.pop()

    for gs in sorted(goals):
        walk(gs, [])
    return sorted(set(out))


def certify_optimal(graph, target, start: int, max_states: int = 2000, limit: int = 10_000) -> float | None:
    """Metres travelled by every shortest action sequence from ``start``.

    Returns None unless all of them move the same distance and that distance
    equals the metric shortest path to a terminal cell.  An agent following any
    shortest action sequence then has a path-length ratio of exactly 1.
    """
    seqs = enumerate_optimal(graph, target, start, max_states, limit)
    if len(seqs) >= limit:
        return None
    g = graph.scene.config.grid_step
    moves = {sum(1 for a in seq if a == 0) for seq in seqs}
    if len(moves) != 1:
        return None
    cells = {graph.pose_of(s).cell for s in oracle_terminals(graph, target)}
    best = brute_cell_path(graph.scene, graph.pose_of(start).cell, cells)
    metres = moves.pop() * g
    return metres if best is not None and abs(metres - best) < 1e-9 else None


# ------------------------------------------------------------- golden fixtures

def fixture_scenes():
    """Small hand-checkable scenes used for golden trajectories."""
    from .geometry import Point2
    from .scene import ObjectInstance, Scene, SceneConfig

    cfg = SceneConfig(grid_step=0.5)
    return [
        Scene("fx-corridor5", cfg, Polygon.rectangle(0, 0, 2.5, 0.5), (), (ObjectInstance("Mug", Point2(2.25, 0.25)),)),
        Scene("fx-room3x3", cfg, Polygon.rectangle(0, 0, 1.5, 1.5), (), (ObjectInstance("Book", Point2(1.4, 1.4)),)),
        Scene("fx-room8", SceneConfig(), Polygon.rectangle(0, 0, 8, 8), (), (ObjectInstance("Vase", Point2(7.5, 7.5)),)),
    ]


_SCRIPTS = {
    "fx-corridor5": [("start", (0, 0, 0, 0)), ("actions", ["MoveAhead", "MoveAhead", "Done"])],
    "fx-room3x3": [("start", (0, 0, 180, 0)), ("actions", ["RotateRight", "RotateRight", "MoveAhead",
                                                          "RotateLeft", "MoveAhead", "Done"])],
    # searching only; early trapezoids are clipped by the walls
    "fx-room8": [("start", (4, 4, 180, 0)), ("actions", ["RotateRight", "MoveAhead", "MoveAhead", "RotateRight",
                                                        "LookDown", "MoveAhead", "Done"])],
}


def regenerate(out_path: Path, log=print) -> None:
    """Re-derive golden fixtures; every stored number is cross-checked first."""
    from .actions import Action
    from .geometry import trapezoid
    from .metrics import summarize
    from .perception import view_frustum
    from .posegraph import build_graph
    from .reward import NavEnv, Stage
    from .scene import Pose, scene_to_dict
    from .trajlog import trajectory_lines

    lines = []
    for scene in fixture_scenes():
        script = dict(_SCRIPTS[scene.id])
        target = scene.objects[0]
        graph = build_graph(scene)
        env = NavEnv(scene, target, graph=graph)
        env.reset(Pose(*script["start"]))
        term = oracle_terminals(graph, target)
        traps = []
        for label in script["actions"]:
            before = env.state.stage
            rec = env.step(Action.parse(label))
            if rec.action is not Action.DONE:
                traps.append(trapezoid(view_frustum(rec.pose_after, scene)))
            if before is Stage.PATHFINDING and rec.action is not Action.DONE:
                bd = brute_distance(graph, target, graph.state_of(rec.pose_after), term)
                assert bd == rec.dist_after, (scene.id, rec.step, bd, rec.dist_after)
        traj = env.trajectory(0)
        summary = summarize(traj, scene, target, graph=graph)
        explore_area = sum(r.area_gain for r in traj.steps)
        checks = ["distance: brute_distance forward BFS on every pathfinding step",
                  "Lstar: brute_cell_path Dijkstra"]
        if explore_area > 0:
            searched = [t for t, r in zip(traps, [r for r in traj.steps if r.action is not Action.DONE])
                        if r.stage is Stage.SEARCHING]
            est, err = mc_area(Intersection_((Union_(tuple(searched)), scene.room_bounds)), 1_000_000, seed=7)
            assert abs(est - explore_area) <= 3 * err + 1e-9, (scene.id, est, explore_area, err)
            log(f"{scene.id}: explored area {explore_area:.6f} vs Monte-Carlo {est:.6f} +- {err:.6f}")
            checks.append(f"explored area: mc_area 1e6 samples seed 7, {est:.6f} +- {err:.6f}")
        if summary.Lstar is not None:
            assert summary.Lstar == brute_cell_path(scene, traj.start_pose.cell,
                                                    {graph.pose_of(s).cell for s in term})
        lines.append(json.dumps({
            "scene": scene_to_dict(scene), "target": target.category, "start": list(script["start"]),
            "actions": script["actions"], "trajectory": list(trajectory_lines(traj)),
            "summary": summary.__dict__, "provenance": checks,
        }))
        log(f"{scene.id}: outcome {traj.outcome.value}, {len(traj.steps)} steps, oracle checks passed")
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log(f"wrote {len(lines)} fixtures to {out_path}")


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="python -m tsrm.testkit")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("regenerate", help="rebuild golden trajectory fixtures")
    r.add_argument("--out", default="tests/fixtures/golden_trajectories.jsonl")
    args = ap.parse_args(argv)
    if args.cmd == "regenerate":
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        regenerate(out, log=lambda m: print(m, file=sys.stderr))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
