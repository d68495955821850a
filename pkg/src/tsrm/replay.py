"""Re-simulate logged trajectories and check every logged field."""

from __future__ import annotations

from pathlib import Path

from .experiment import ConfigError, EvalResult, ExperimentConfig, long_subset
from .metrics import ConsistencyError, compute_report, summarize, write_episode_csv, write_metrics_csv
from .posegraph import build_graph
from .reward import NavEnv, Trajectory
from .trajlog import read_trajectories


def verify_trajectory(traj: Trajectory, env: NavEnv) -> None:
    env.reset(traj.start_pose)
    where = f"episode {traj.episode_id}"
    if env.state.start_confidence != traj.start_confidence:
        raise ConsistencyError(f"{where}: start confidence logged {traj.start_confidence}, "
                               f"replayed {env.state.start_confidence}")
    for rec in traj.steps:
        if env.state.done:
            raise ConsistencyError(f"{where}: log continues after the episode ended at step {rec.step - 1}")
        got = env.step(rec.action)
        for name in ("step", "pose_after", "confidence", "stage", "area_gain", "collided", "divided", "dist_after"):
            a, b = getattr(rec, name), getattr(got, name)
            if a != b:
                raise ConsistencyError(f"{where} step {rec.step}: {name} logged {a!r}, replayed {b!r}")
        if rec.reward.as_dict() != got.reward.as_dict():
            raise ConsistencyError(f"{where} step {rec.step}: reward logged {rec.reward.as_dict()}, "
                                   f"replayed {got.reward.as_dict()}")
    if env.state.outcome is not traj.outcome:
        raise ConsistencyError(f"{where}: outcome logged {traj.outcome.value}, replayed {env.state.outcome.value}")
    if env.state.divide_step != traj.divide_step:
        raise ConsistencyError(f"{where}: divide step logged {traj.divide_step}, replayed {env.state.divide_step}")


def replay_log(path: str | Path, cfg: ExperimentConfig, out: Path | None = None) -> EvalResult:
    trajs = read_trajectories(path)
    if not trajs:
        raise ConsistencyError(f"{path} holds no episodes")
    scenes = {s.id: s for s in cfg.eval_scenes.load()}
    graphs = {}
    sums = []
    for t in trajs:
        scene = scenes.get(t.scene_id)
        if scene is None:
            raise ConfigError(f"episode {t.episode_id} refers to unknown scene {t.scene_id!r}")
        target = scene.object(t.target)
        g = graphs.setdefault(scene.id, build_graph(scene))
        env = NavEnv(scene, target, cfg.reward, cfg.detector, g)
        verify_trajectory(t, env)
        sums.append(summarize(t, scene, target, cfg.detector, cfg.reward.c_target, g))
    grid = trajs[0].grid_step
    long = long_subset(sums, grid)
    res = EvalResult(compute_report(sums), compute_report(long) if long else None, sums)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(res.all, out / "metrics_all.csv")
        if res.long is not None:
            write_metrics_csv(res.long, out / "metrics_long.csv")
        write_episode_csv(sums, out / "episodes.csv")
    return res
