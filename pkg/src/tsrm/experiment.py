"""Declarative experiment configs and the runners behind the CLI."""

from __future__ import annotations

import csv
import glob as globlib
import hashlib
import json
import math
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

from .agent import (AgentPolicy, FeatureMap, HyperParams, Task, TrainResult, evaluate_policy, load_checkpoint,
                    make_tasks, save_checkpoint, train)
from .metrics import EpisodeSummary, MetricsReport, compute_report, write_episode_csv, write_metrics_csv
from .perception import DetectorConfig
from .reward import RewardConfig
from .scene import GenerationParams, Scene, SceneConfig, dumps_scene, generate_scene, load_scene
from .scripted import BUILTIN_POLICIES, make_builtin
from .trajlog import trajectory_lines


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------- dict <-> dataclass

def _camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(p[:1].upper() + p[1:] for p in rest)


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def to_dict(obj) -> Any:
    if is_dataclass(obj):
        return {_camel(f.name): to_dict(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(x) for x in obj]
    return obj


_NESTED = {}  # (class, field) -> nested dataclass type


def from_dict(cls, d: Any, where: str = ""):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{where or cls.__name__}: expected an object")
    known = {_camel(f.name): f for f in fields(cls)}
    kwargs = {}
    for key, v in d.items():
        f = known.get(key)
        if f is None:
            raise ConfigError(f"unknown config key {where + key!r}")
        sub = _NESTED.get((cls, f.name))
        kwargs[f.name] = from_dict(sub, v, f"{where}{key}.") if sub else _tuplify(v)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or cls.__name__}: {e}") from e


# ------------------------------------------------------------- config types

_NOT_SCENES = {"manifest.json", "config.resolved.json"}  # written beside generated scenes


@dataclass
class SceneSource:
    """Either a glob of scene files or a block of generated seeds."""

    glob: str | None = None
    start: int = 0
    count: int = 0
    params: GenerationParams = field(default_factory=GenerationParams)

    def load(self) -> list[Scene]:
        if self.glob:
            paths = [p for p in sorted(globlib.glob(self.glob)) if Path(p).name not in _NOT_SCENES]
            if not paths:
                raise ConfigError(f"scene glob {self.glob!r} matches no files")
            return [load_scene(p) for p in paths]
        if self.count < 1:
            raise ConfigError("scene source needs a glob or count >= 1")
        return [generate_scene(self.start + k, self.params) for k in range(self.count)]


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    workers: int = 1
    out: str = "runs/experiment"
    train_scenes: SceneSource = field(default_factory=lambda: SceneSource(count=20))
    eval_scenes: SceneSource = field(default_factory=lambda: SceneSource(start=1000, count=10))
    reward: RewardConfig = field(default_factory=RewardConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    agent: HyperParams = field(default_factory=HyperParams)
    policy: str = "coverage"  # builtin name or checkpoint path, for eval and sweeps
    eval_episodes: int = 500
    eval_seed: int = 7
    thresholds: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    sweep_seeds: tuple[int, ...] = (0, 1, 2)
    ablation_seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.eval_episodes < 1:
            raise ConfigError("eval episodes must be >= 1")
        if not all(0.0 <= t < 1.0 for t in self.thresholds):
            raise ConfigError(f"thresholds must lie in [0, 1), got {self.thresholds}")


_NESTED.update({
    (ExperimentConfig, "train_scenes"): SceneSource,
    (ExperimentConfig, "eval_scenes"): SceneSource,
    (ExperimentConfig, "reward"): RewardConfig,
    (ExperimentConfig, "detector"): DetectorConfig,
    (ExperimentConfig, "agent"): HyperParams,
    (SceneSource, "params"): GenerationParams,
    (GenerationParams, "config"): SceneConfig,
})


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if isinstance(d, dict):
        d.pop("invocation", None)  # provenance files record how they were produced
    return from_dict(ExperimentConfig, d)


def dumps_config(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2) + "\n"


def write_provenance(cfg: ExperimentConfig, out: Path, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    d = to_dict(cfg)
    if extra:
        d["invocation"] = extra
    (out / "config.resolved.json").write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")


def training_digest_source(cfg: ExperimentConfig, scenes: Sequence[Scene]) -> dict:
    """Everything a checkpoint depends on except the episode budget.

    Scenes enter by content hash, so moving the scene files keeps checkpoints valid.
    """
    agent = to_dict(cfg.agent)
    agent.pop("episodes")
    # eval cadence changes curves, not parameters
    for k in ("evalEvery", "evalEpisodes", "greedyEval"):
        agent.pop(k)
    scene_hashes = [hashlib.sha256(dumps_scene(s).encode("utf-8")).hexdigest() for s in scenes]
    return {"seed": cfg.seed, "workers": cfg.workers, "trainScenes": scene_hashes,
            "reward": to_dict(cfg.reward), "detector": to_dict(cfg.detector), "agent": agent}


# ------------------------------------------------------------- runners

def policy_factory(spec: str, tasks: Sequence[Task]) -> Callable[[], object]:
    if spec in BUILTIN_POLICIES:
        return lambda: make_builtin(spec)
    path = Path(spec)
    if not path.exists():
        raise ConfigError(f"policy {spec!r} is neither a builtin {sorted(BUILTIN_POLICIES)} nor a checkpoint file")
    params = load_checkpoint(path).params
    fmap = FeatureMap(tasks[0].graph.pitches)
    return lambda: AgentPolicy(params, fmap)


def long_subset(summaries: Sequence[EpisodeSummary], grid_step: float) -> list[EpisodeSummary]:
    """Episodes whose optimal path is at least five grid steps."""
    return [s for s in summaries if s.Lstar is not None and s.Lstar >= 5 * grid_step - 1e-9]


@dataclass
class EvalResult:
    all: MetricsReport
    long: MetricsReport | None
    summaries: list[EpisodeSummary]


def run_eval(cfg: ExperimentConfig, out: Path | None = None, tasks: Sequence[Task] | None = None,
             policy: str | None = None) -> EvalResult:
    tasks = tasks if tasks is not None else make_tasks(cfg.eval_scenes.load())
    make = policy_factory(policy or cfg.policy, tasks)
    fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "trajectories.jsonl", "w", encoding="utf-8", newline="\n")

    def log(traj):
        if fh is not None:
            for line in trajectory_lines(traj):
                fh.write(line + "\n")

    try:
        sums = evaluate_policy(make, tasks, cfg.eval_episodes, cfg.eval_seed, cfg.reward, cfg.detector, log)
    finally:
        if fh is not None:
            fh.close()
    grid = tasks[0].scene.config.grid_step
    long = long_subset(sums, grid)
    res = EvalResult(compute_report(sums), compute_report(long) if long else None, sums)
    if out is not None:
        write_metrics_csv(res.all, out / "metrics_all.csv")
        if res.long is not None:
            write_metrics_csv(res.long, out / "metrics_long.csv")
        else:
            (out / "metrics_long.csv").write_text("metric,value,count,stderr\n", encoding="utf-8")
        write_episode_csv(sums, out / "episodes.csv")
    return res


CURVE_COLUMNS = ["episode", "SR", "SPL", "SSR", "SSSPL", "NSNPL"]


def _f6(v) -> str:
    return "" if v is None else f"{v:.6f}"


def write_curves(result: TrainResult, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for c in result.curve:
            w.writerow([c.episode, _f6(c.SR), _f6(c.SPL), _f6(c.SSR), _f6(c.SSSPL), _f6(c.NSNPL)])


def run_train(cfg: ExperimentConfig, out: Path | None = None, resume: str | Path | None = None,
              log: Callable[[str], None] | None = None) -> TrainResult:
    scenes = cfg.train_scenes.load()
    tasks = make_tasks(scenes)
    eval_tasks = make_tasks(cfg.eval_scenes.load()) if cfg.agent.eval_every else None
    digest_src = training_digest_source(cfg, scenes)
    prev = load_checkpoint(resume, digest_src) if resume else None
    hyper = replace(cfg.agent, workers=cfg.workers)
    res = train(tasks, cfg.reward, hyper, cfg.seed, eval_tasks, cfg.detector, resume=prev, log=log)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(res, out / "checkpoint.json", digest_src)
        write_curves(res, out / "curves.csv")
    return res


VARIANTS = {
    "sparse": (False, False),
    "explore": (True, False),
    "distance": (False, True),
    "both": (True, True),
}

METRIC_NAMES = ("SR", "SPL", "SSR", "SSSPL", "NSNPL")


def run_ablation(cfg: ExperimentConfig, out: Path | None = None, log: Callable[[str], None] | None = None,
                 variants: Sequence[str] = tuple(VARIANTS)) -> dict[str, list[MetricsReport]]:
    """Train every reward variant for every seed; evaluate with shared seeds."""
    train_tasks = make_tasks(cfg.train_scenes.load())
    eval_tasks = make_tasks(cfg.eval_scenes.load())
    hyper = replace(cfg.agent, workers=cfg.workers, eval_every=0)
    results: dict[str, list[MetricsReport]] = {}
    rows = []
    for name in variants:
        ex, di = VARIANTS[name]
        rcfg = replace(cfg.reward, explore=ex, distance=di)
        results[name] = []
        for seed in cfg.ablation_seeds:
            res = train(train_tasks, rcfg, hyper, seed, detector=cfg.detector)
            fmap = FeatureMap(eval_tasks[0].graph.pitches)
            sums = evaluate_policy(lambda: AgentPolicy(res.params, fmap), eval_tasks, cfg.eval_episodes,
                                   cfg.eval_seed, rcfg, cfg.detector)
            rep = compute_report(sums)
            results[name].append(rep)
            rows.append((name, seed, rep))
            if log:
                log(f"{name} seed {seed}: " + " ".join(f"{m} {_f6(getattr(rep, m))}" for m in METRIC_NAMES))
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                save_checkpoint(res, out / f"checkpoint_{name}_seed{seed}.json")
    if out is not None:
        with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["variant", "seed", *METRIC_NAMES, "K", "K_nav"])
            for name, seed, rep in rows:
                w.writerow([name, seed, *(_f6(getattr(rep, m)) for m in METRIC_NAMES), rep.K, rep.K_nav])
    return results


def mean_metric(reports: Sequence[MetricsReport], metric: str) -> float:
    vals = [getattr(r, metric) for r in reports]
    vals = [0.0 if v is None else v for v in vals]
    return math.fsum(vals) / len(vals)


def run_sweep(cfg: ExperimentConfig, thresholds: Sequence[float], out: Path | None = None,
              log: Callable[[str], None] | None = None) -> dict[tuple[float, int], MetricsReport]:
    """One evaluation per (threshold, seed); the episode seeds are shared across thresholds."""
    if not thresholds:
        raise ConfigError("thresholds must be non-empty")
    tasks = make_tasks(cfg.eval_scenes.load())
    make = policy_factory(cfg.policy, tasks)
    results = {}
    for seed in cfg.sweep_seeds:
        det = replace(cfg.detector, seed=seed)
        for c in thresholds:
            rcfg = replace(cfg.reward, c_target=float(c))
            rep = compute_report(evaluate_policy(make, tasks, cfg.eval_episodes, cfg.eval_seed + seed, rcfg, det))
            results[(float(c), seed)] = rep
            if log:
                log(f"seed {seed} c_target {c}: SR {rep.SR:.3f} SSR {rep.SSR:.3f} SPL {rep.SPL:.3f}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["threshold", "seed", "metric", "value", "count"])
            for m in METRIC_NAMES:
                for seed in cfg.sweep_seeds:
                    for c in thresholds:
                        rep = results[(float(c), seed)]
                        n = rep.K_nav if m == "NSNPL" else rep.K
                        w.writerow([f"{float(c):.6f}", seed, m, _f6(getattr(rep, m)), n])
    return results


def interior_optimum(results: dict[tuple[float, int], MetricsReport], thresholds: Sequence[float],
                     seed: int, metric: str = "SR") -> float | None:
    """An interior threshold whose metric beats both extremes, else None."""
    ts = sorted(float(t) for t in thresholds)
    lo, hi = getattr(results[(ts[0], seed)], metric), getattr(results[(ts[-1], seed)], metric)
    best = max(ts[1:-1], key=lambda t: getattr(results[(t, seed)], metric), default=None)
    if best is None:
        return None
    v = getattr(results[(best, seed)], metric)
    return best if v > lo and v > hi else None

