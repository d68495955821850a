"""Replays stored golden trajectories; regenerate with `python -m tsrm.testkit regenerate`."""

import json
from pathlib import Path

import pytest

from tsrm.actions import Action
from tsrm.metrics import summarize
from tsrm.posegraph import build_graph
from tsrm.reward import NavEnv
from tsrm.scene import Pose, scene_from_dict
from tsrm.trajlog import trajectory_lines

FIXTURES = Path(__file__).parent / "fixtures" / "golden_trajectories.jsonl"
CASES = [json.loads(line) for line in FIXTURES.read_text().splitlines() if line.strip()]


@pytest.mark.parametrize("case", CASES, ids=[c["scene"]["id"] for c in CASES])
def test_golden_trajectory(case):
    scene = scene_from_dict(case["scene"])
    target = scene.object(case["target"])
    graph = build_graph(scene)
    env = NavEnv(scene, target, graph=graph)
    env.reset(Pose(*case["start"]))
    for label in case["actions"]:
        env.step(Action.parse(label))
    traj = env.trajectory(0)
    assert list(trajectory_lines(traj)) == case["trajectory"]
    assert summarize(traj, scene, target, graph=graph).__dict__ == case["summary"]
    assert case["provenance"]


def test_fixture_set_covers_outcomes():
    outcomes = {json.loads(c["trajectory"][-1])["outcome"] for c in CASES}
    assert {"Success", "FailDone"} <= outcomes
