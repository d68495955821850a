"""Episode summaries and the SR / SPL / SSR / SSSPL / NSNPL aggregates."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .perception import DetectorConfig, clean_confidence
from .posegraph import UNREACHABLE, PoseGraph, build_graph, metric_shortest_path
from .reward import Trajectory
from .scene import ObjectInstance, Pose, Scene


class MetricsError(ValueError):
    pass


class MalformedLogError(MetricsError):
    pass


class ConsistencyError(MetricsError):
    pass


@dataclass(frozen=True)
class EpisodeSummary:
    episode_id: int
    scene_id: str
    target: str
    success: bool
    entered_pathfinding: bool
    L: float
    Lstar: float | None  # None: unreachable
    Lsearch: float
    LstarSearch: float | None
    Lnav: float
    LstarNav: float | None
    divide_step: int | None
    optimal_steps: int  # action-graph distance from the start pose


EPISODE_COLUMNS = [
    "episode_id", "scene_id", "target", "success", "entered_pathfinding", "L", "Lstar", "Lsearch",
    "LstarSearch", "Lnav", "LstarNav", "divide_step", "optimal_steps",
]


def criterion_mask(graph: PoseGraph, target: ObjectInstance, detector: DetectorConfig,
                   c_target: float) -> np.ndarray:
    """States whose noise-free detector confidence exceeds ``c_target``."""
    key = ("criterion", target.category, target.position, detector.model, detector.max_range,
           detector.occlusion_check, c_target)
    cached = graph._fields.get(key)
    if cached is not None:
        return cached
    scene = graph.scene
    # farthest point of any view trapezoid is a far corner
    cfg = scene.config
    reach = max(far for _, _, far in cfg.frustum_near_far) / math.cos(math.radians(cfg.fov_half_angle))
    tx, ty = target.position.x, target.position.y
    mask = np.zeros(graph.n_states, dtype=bool)
    for i, j in graph.cells:
        cx, cy = scene.cell_center(i, j)
        if (cx - tx) ** 2 + (cy - ty) ** 2 > reach * reach + 1e-6:
            continue
        for yaw in graph.yaws:
            for pitch in graph.pitches:
                pose = Pose(i, j, yaw, pitch)
                if clean_confidence(pose, target, scene, detector) > c_target:
                    mask[graph.state_of(pose)] = True
    graph._fields[key] = mask
    return mask


def criterion_cells(graph: PoseGraph, target: ObjectInstance, detector: DetectorConfig,
                    c_target: float) -> frozenset[tuple[int, int]]:
    """Cells of every pose that satisfies the dividing criterion."""
    return frozenset(graph.pose_of(s).cell for s in np.flatnonzero(criterion_mask(graph, target, detector, c_target)))


def _len(v) -> float | None:
    return None if v is UNREACHABLE else float(v)


def summarize(traj: Trajectory, scene: Scene, target: ObjectInstance, detector: DetectorConfig | None = None,
              c_target: float = 0.7, graph: PoseGraph | None = None) -> EpisodeSummary:
    if traj.outcome.value == "Running":
        raise MalformedLogError(f"episode {traj.episode_id} has no terminal record")
    detector = detector or DetectorConfig()
    graph = graph if graph is not None else build_graph(scene)
    df = graph.distance_field(target)
    g = scene.config.grid_step
    terminal_cells = {graph.pose_of(s).cell for s in np.flatnonzero(df.terminals)}
    start = traj.start_pose
    moves = [r.moved for r in traj.steps]
    L = sum(moves) * g
    nav = traj.divide_step is not None
    if nav:
        k = traj.divide_step
        Lsearch = sum(moves[:k]) * g
        Lnav = sum(moves[k:]) * g
        if k == 0:
            LstarSearch = 0.0
        else:
            # under detector noise the episode's own divide cell met the criterion too
            crit = criterion_cells(graph, target, detector, c_target) | {traj.divide_pose.cell}
            LstarSearch = _len(metric_shortest_path(scene, start.cell, crit))
        LstarNav = _len(metric_shortest_path(scene, traj.divide_pose.cell, terminal_cells))
    else:
        Lsearch, Lnav, LstarSearch, LstarNav = L, 0.0, None, None
    Lstar = _len(metric_shortest_path(scene, start.cell, terminal_cells))
    return EpisodeSummary(traj.episode_id, traj.scene_id, traj.target, traj.success, nav, L, Lstar, Lsearch,
                          LstarSearch, Lnav, LstarNav, traj.divide_step, int(df.dist[graph.state_of(start)]))


def _ratio(actual: float, best: float | None, what: str) -> float:
    if best is None:
        raise ConsistencyError(f"{what}: optimal length is unreachable on a counted episode")
    denom = max(actual, best)
    return 1.0 if denom == 0 else best / denom


def compute_sr(summaries: Sequence[EpisodeSummary]) -> float:
    if not summaries:
        raise MetricsError("SR needs at least one episode")
    return sum(s.success for s in summaries) / len(summaries)


def compute_spl(summaries: Sequence[EpisodeSummary]) -> float:
    if not summaries:
        raise MetricsError("SPL needs at least one episode")
    return math.fsum(_ratio(s.L, s.Lstar, "SPL") for s in summaries if s.success) / len(summaries)


def compute_ssr(summaries: Sequence[EpisodeSummary]) -> float:
    if not summaries:
        raise MetricsError("SSR needs at least one episode")
    return sum(s.entered_pathfinding for s in summaries) / len(summaries)


def compute_ssspl(summaries: Sequence[EpisodeSummary]) -> float:
    if not summaries:
        raise MetricsError("SSSPL needs at least one episode")
    return math.fsum(_ratio(s.Lsearch, s.LstarSearch, "SSSPL")
                     for s in summaries if s.entered_pathfinding) / len(summaries)


def compute_nsnpl(summaries: Sequence[EpisodeSummary]) -> float | None:
    """None when no episode reached the pathfinding stage."""
    nav = [s for s in summaries if s.entered_pathfinding]
    if not nav:
        return None
    return math.fsum(_ratio(s.Lnav, s.LstarNav, "NSNPL") for s in nav if s.success) / len(nav)


# per-episode contributions, for tests and fixtures
def spl_term(s: EpisodeSummary) -> float:
    return _ratio(s.L, s.Lstar, "SPL") if s.success else 0.0


def nsnpl_term(s: EpisodeSummary) -> float:
    return _ratio(s.Lnav, s.LstarNav, "NSNPL") if (s.success and s.entered_pathfinding) else 0.0


def ssspl_term(s: EpisodeSummary) -> float:
    return _ratio(s.Lsearch, s.LstarSearch, "SSSPL") if s.entered_pathfinding else 0.0


@dataclass(frozen=True)
class MetricsReport:
    SR: float
    SPL: float
    SSR: float
    SSSPL: float
    NSNPL: float | None
    K: int
    K_nav: int

    def as_dict(self) -> dict:
        return asdict(self)


def compute_report(summaries: Sequence[EpisodeSummary]) -> MetricsReport:
    return MetricsReport(compute_sr(summaries), compute_spl(summaries), compute_ssr(summaries),
                         compute_ssspl(summaries), compute_nsnpl(summaries), len(summaries),
                         sum(s.entered_pathfinding for s in summaries))


def _stderr(v: float | None, n: int) -> float | None:
    if v is None or n == 0:
        return None
    return math.sqrt(max(v * (1 - v), 0.0) / n)


def _fmt(v) -> str:
    return "" if v is None else f"{v:.6f}"


def write_metrics_csv(report: MetricsReport, path: str | Path) -> None:
    rows = [("SR", report.SR, report.K), ("SPL", report.SPL, report.K), ("SSR", report.SSR, report.K),
            ("SSSPL", report.SSSPL, report.K), ("NSNPL", report.NSNPL, report.K_nav)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        # last column is a convenience binomial standard error, not a reported metric
        w.writerow(["metric", "value", "count", "stderr"])
        for name, v, n in rows:
            w.writerow([name, _fmt(v), n, _fmt(_stderr(v, n))])


def write_episode_csv(summaries: Iterable[EpisodeSummary], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for s in summaries:
            row = []
            for col in EPISODE_COLUMNS:
                v = getattr(s, col)
                if isinstance(v, bool):
                    row.append(int(v))
                elif isinstance(v, float):
                    row.append(f"{v:.6f}")
                else:
                    row.append("" if v is None else v)
            w.writerow(row)
