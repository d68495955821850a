"""JSONL trajectory logs: one object per step, a closing record per episode."""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterable, Iterator

from .actions import Action
from .metrics import MalformedLogError
from .reward import Outcome, RewardBreakdown, Stage, StepRecord, Trajectory
from .scene import Pose

_ZERO = {"explore": 0.0, "distance": 0.0, "collision": 0.0, "slack": 0.0, "final": 0.0}


def _pose(p: Pose) -> dict:
    return {"i": p.i, "j": p.j, "yaw": p.yaw, "pitch": p.pitch}


def trajectory_lines(traj: Trajectory) -> Iterator[str]:
    head = {"episodeId": traj.episode_id, "sceneId": traj.scene_id, "target": traj.target}
    yield json.dumps({**head, "step": 0, "action": None, "stage": traj.start_stage.value,
                      "confidence": traj.start_confidence, "pose": _pose(traj.start_pose),
                      "reward": _ZERO, "areaGain": 0.0, "gridStep": traj.grid_step})
    for r in traj.steps:
        yield json.dumps({**head, "step": r.step, "action": r.action.label, "stage": r.stage.value,
                          "confidence": r.confidence, "pose": _pose(r.pose_after), "reward": r.reward.as_dict(),
                          "areaGain": r.area_gain, "collided": r.collided, "divided": r.divided,
                          "distance": r.dist_after})
    yield json.dumps({**head, "outcome": traj.outcome.value, "pathLengthMeters": traj.path_length,
                      "divideStep": traj.divide_step, "steps": len(traj.steps), "totalReward": traj.total_reward})


def write_trajectories(trajs: Iterable[Trajectory], fh: IO[str]) -> None:
    for t in trajs:
        for line in trajectory_lines(t):
            fh.write(line + "\n")


def _parse_pose(d: dict, where: str) -> Pose:
    try:
        return Pose(int(d["i"]), int(d["j"]), int(d["yaw"]), int(d["pitch"]))
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedLogError(f"{where}: bad pose {d!r}") from e


def parse_trajectories(lines: Iterable[str]) -> list[Trajectory]:
    out: list[Trajectory] = []
    cur: dict | None = None
    for n, raw in enumerate(lines, 1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as e:
            raise MalformedLogError(f"line {n}: invalid JSON") from e
        where = f"line {n}"
        if "outcome" in d:
            if cur is None or cur["id"] != d.get("episodeId"):
                raise MalformedLogError(f"{where}: closing record without matching steps")
            try:
                outcome = Outcome(d["outcome"])
            except ValueError as e:
                raise MalformedLogError(f"{where}: {e}") from e
            out.append(Trajectory(cur["id"], cur["scene"], cur["target"], cur["start"], cur["stage"], cur["conf"],
                                  cur["steps"], outcome, d.get("divideStep"), cur["grid"]))
            cur = None
            continue
        try:
            step = int(d["step"])
            if step == 0:
                if cur is not None:
                    raise MalformedLogError(f"{where}: episode {cur['id']} is missing its closing record")
                cur = {"id": d["episodeId"], "scene": d["sceneId"], "target": d["target"],
                       "start": _parse_pose(d["pose"], where), "stage": Stage(d["stage"]),
                       "conf": float(d["confidence"]), "grid": float(d["gridStep"]), "steps": [],
                       "prev": _parse_pose(d["pose"], where)}
                continue
            if cur is None or d["episodeId"] != cur["id"]:
                raise MalformedLogError(f"{where}: step record outside an episode")
            after = _parse_pose(d["pose"], where)
            rec = StepRecord(step, Action.parse(d["action"]), RewardBreakdown(**d["reward"]),
                             float(d["confidence"]), Stage(d["stage"]), cur["prev"], after,
                             float(d["areaGain"]), bool(d.get("collided", False)), bool(d.get("divided", False)),
                             d.get("distance"))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, MalformedLogError):
                raise
            raise MalformedLogError(f"{where}: {e}") from e
        cur["steps"].append(rec)
        cur["prev"] = after
    if cur is not None:
        raise MalformedLogError(f"episode {cur['id']} is missing its closing record")
    return out


def read_trajectories(path: str | Path) -> list[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        return parse_trajectories(fh)
