"""Grid-world object navigation with a two-stage (search, then path-find) reward."""

from .actions import Action
from .geometry import Point2, Polygon, Region, ViewFrustum2D, area, intersect, trapezoid, union
from .metrics import EpisodeSummary, MetricsReport, compute_report, summarize
from .perception import DetectorConfig, detect
from .posegraph import UNREACHABLE, PoseGraph, build_graph, metric_shortest_path
from .reward import NavEnv, Outcome, RewardConfig, Stage, run_episode
from .scene import ObjectInstance, Pose, Scene, SceneConfig, generate_scene, load_scene, save_scene

__version__ = "0.1.0"
