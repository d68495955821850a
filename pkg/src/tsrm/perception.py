"""Simulated target detector: frustum visibility, line of sight, confidence."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np

from .geometry import Point2, ViewFrustum2D
from .scene import ObjectInstance, Pose, Scene

MODELS = ("binary", "linear-falloff")


@dataclass(frozen=True)
class DetectorConfig:
    model: str = "binary"
    max_range: float | None = None  # None: far distance of the level-gaze frustum
    noise_sigma: float = 0.0
    occlusion_check: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown detector model {self.model!r}; choose from {MODELS}")
        if not (0 <= self.noise_sigma < 0.5):
            raise ValueError(f"noise_sigma must be in [0, 0.5), got {self.noise_sigma}")
        if self.max_range is not None and not self.max_range > 0:
            raise ValueError(f"max_range must be > 0, got {self.max_range}")


@dataclass(frozen=True)
class Detection:
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence out of [0, 1]: {self.confidence}")


def view_frustum(pose: Pose, scene: Scene) -> ViewFrustum2D:
    cfg = scene.config
    near, far = cfg.near_far(pose.pitch)
    cx, cy = scene.cell_center(pose.i, pose.j)
    return ViewFrustum2D(Point2(cx, cy), float(pose.yaw), near, far, cfg.fov_half_angle)


def supercover(x0: float, y0: float, x1: float, y1: float, step: float) -> set[tuple[int, int]]:
    """All grid cells touched by the closed segment, corners included."""
    u0, v0, u1, v1 = x0 / step, y0 / step, x1 / step, y1 / step
    du, dv = u1 - u0, v1 - v0
    ts = [0.0, 1.0]
    corner_ts = []
    ut: set[float] = set()
    if du != 0.0:
        lo, hi = sorted((u0, u1))
        for k in range(math.ceil(lo), math.floor(hi) + 1):
            t = (k - u0) / du
            if 0.0 <= t <= 1.0:
                ts.append(t)
                ut.add(t)
    if dv != 0.0:
        lo, hi = sorted((v0, v1))
        for k in range(math.ceil(lo), math.floor(hi) + 1):
            t = (k - v0) / dv
            if 0.0 <= t <= 1.0:
                ts.append(t)
                if any(abs(t - s) < 1e-12 for s in ut):
                    corner_ts.append(t)
    ts.sort()
    cells: set[tuple[int, int]] = set()

    def add_point(u: float, v: float) -> None:
        ius = [math.floor(u)]
        if abs(u - round(u)) < 1e-12:
            ius = [round(u) - 1, round(u)]
        ivs = [math.floor(v)]
        if abs(v - round(v)) < 1e-12:
            ivs = [round(v) - 1, round(v)]
        for a in ius:
            for b in ivs:
                cells.add((a, b))

    for a, b in zip(ts, ts[1:]):
        if b - a < 1e-15:
            continue
        tm = 0.5 * (a + b)
        add_point(u0 + tm * du, v0 + tm * dv)
    for t in corner_ts:
        add_point(u0 + t * du, v0 + t * dv)
    return cells


def line_of_sight(scene: Scene, pose: Pose, target: Point2) -> bool:
    """True iff the segment from the agent centre to the target crosses no
    non-reachable cell.  Cells containing the target itself are exempt."""
    g = scene.config.grid_step
    cx, cy = scene.cell_center(pose.i, pose.j)
    exempt = supercover(target.x, target.y, target.x, target.y, g)
    exempt.add(pose.cell)
    reach = scene.reachable_cells
    for c in supercover(cx, cy, target.x, target.y, g):
        if c not in reach and c not in exempt:
            return False
    return True


def visible(pose: Pose, target: ObjectInstance, scene: Scene, occlusion_check: bool = True) -> bool:
    p = target.position
    if not view_frustum(pose, scene).contains(p.x, p.y):
        return False
    return not occlusion_check or line_of_sight(scene, pose, p)


def _max_range(cfg: DetectorConfig, scene: Scene) -> float:
    if cfg.max_range is not None:
        return cfg.max_range
    return scene.config.near_far(0)[1]


def clean_confidence(pose: Pose, target: ObjectInstance, scene: Scene, cfg: DetectorConfig) -> float:
    """Detector confidence before noise."""
    if not visible(pose, target, scene, cfg.occlusion_check):
        return 0.0
    if cfg.model == "binary":
        return 1.0
    cx, cy = scene.cell_center(pose.i, pose.j)
    d = math.hypot(target.position.x - cx, target.position.y - cy)
    return max(0.0, 1.0 - d / _max_range(cfg, scene))


def _noise(cfg: DetectorConfig, scene: Scene, pose: Pose, step_index: int) -> float:
    key = [cfg.seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(scene.id.encode("utf-8"))]
    # word 0 stays zero so per-draw counter increments never collide across poses
    counter = [0, (pose.i & 0xFFFFFFFF) | ((pose.j & 0xFFFFFFFF) << 32),
               (pose.yaw & 0xFFFF) | (((pose.pitch + 1000) & 0xFFFF) << 16), step_index & 0xFFFFFFFFFFFFFFFF]
    rng = np.random.Generator(np.random.Philox(key=key, counter=counter))
    return float(rng.normal(0.0, cfg.noise_sigma))


def detect(pose: Pose, target: ObjectInstance, scene: Scene, cfg: DetectorConfig, step_index: int) -> Detection:
    c = clean_confidence(pose, target, scene, cfg)
    if cfg.noise_sigma > 0:
        c = min(1.0, max(0.0, c + _noise(cfg, scene, pose, step_index)))
    return Detection(c)
