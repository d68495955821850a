import csv

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsrm.actions import Action
from tsrm.metrics import (ConsistencyError, EpisodeSummary, MalformedLogError, MetricsError, compute_nsnpl,
                          compute_report, compute_spl, compute_sr, compute_ssr, compute_ssspl, criterion_cells,
                          nsnpl_term, spl_term, ssspl_term, summarize, write_episode_csv, write_metrics_csv)
from tsrm.perception import DetectorConfig
from tsrm.posegraph import build_graph
from tsrm.reward import NavEnv, Outcome, run_episode
from tsrm.scene import Pose
from tsrm.scripted import OraclePolicy
from tsrm.testkit import brute_cell_path
from tsrm.trajlog import parse_trajectories, trajectory_lines


def summ(success=False, nav=False, L=0.0, Lstar=1.0, Ls=0.0, Lss=1.0, Ln=0.0, Lsn=1.0):
    return EpisodeSummary(0, "s", "t", success, nav, L, Lstar, Ls, Lss, Ln, Lsn, 1 if nav else None, 1)


def test_sr_examples():
    assert compute_sr([summ(True, True)] * 3) == 1.0
    assert compute_sr([summ()] * 3) == 0.0
    assert compute_sr([summ(True, True)] * 3 + [summ()]) == 0.75
    with pytest.raises(MetricsError):
        compute_sr([])


def test_spl_examples():
    assert spl_term(summ(True, True, L=2, Lstar=2)) == 1.0
    assert spl_term(summ(True, True, L=4, Lstar=2)) == 0.5
    assert spl_term(summ(False, True, L=2, Lstar=2)) == 0.0
    assert spl_term(summ(True, True, L=0, Lstar=0)) == 1.0
    with pytest.raises(ConsistencyError):
        compute_spl([summ(True, True, Lstar=None)])


def test_ssr_examples():
    assert compute_ssr([summ(nav=True)] * 2) == 1.0
    assert compute_ssr([summ()] * 2) == 0.0
    assert compute_ssr([summ(nav=True), summ()]) == 0.5


def test_ssspl_examples():
    assert ssspl_term(summ(nav=True, Ls=3, Lss=3)) == 1.0
    assert ssspl_term(summ(nav=True, Ls=6, Lss=3)) == 0.5
    assert ssspl_term(summ()) == 0.0
    # failed episodes still earn their searching-stage term
    assert compute_ssspl([summ(False, True, Ls=3, Lss=3)]) == 1.0


def test_nsnpl_examples():
    assert nsnpl_term(summ(True, True, Ln=2, Lsn=2)) == 1.0
    assert nsnpl_term(summ(True, True, Ln=4, Lsn=2)) == 0.5
    assert nsnpl_term(summ(False, True, Ln=2, Lsn=2)) == 0.0
    assert compute_nsnpl([summ(), summ()]) is None
    assert compute_nsnpl([summ(True, True, Ln=4, Lsn=2), summ(False, True), summ()]) == 0.25


lengths = st.floats(0, 20, allow_nan=False) | st.sampled_from([0.0, 0.5, 1.0])


@st.composite
def summaries(draw):
    nav = draw(st.booleans())
    success = nav and draw(st.booleans())
    L1, L2 = draw(lengths), draw(lengths)
    return summ(success, nav, L1 + L2, draw(lengths), L1, draw(lengths), L2, draw(lengths))


@given(st.lists(summaries(), min_size=1, max_size=40))
def test_ranges_and_orderings(ss):
    r = compute_report(ss)
    for v in (r.SR, r.SPL, r.SSR, r.SSSPL):
        assert 0 <= v <= 1
    assert r.NSNPL is None or 0 <= r.NSNPL <= 1
    assert r.SPL <= r.SR + 1e-12
    assert r.SSSPL <= r.SSR + 1e-12
    assert r.K == len(ss) and r.K_nav == sum(s.entered_pathfinding for s in ss)


def run(scene, graph, start, policy=None):
    env = NavEnv(scene, scene.objects[0], graph=graph)
    t = run_episode(env, policy or OraclePolicy(), seed=0, start_pose=start)
    return t, summarize(t, scene, scene.objects[0], graph=graph)


def test_never_sees_target(corridor, corridor_graph):
    class Spin:
        def reset(self, env, rng):
            pass

        def act(self, env, rng):
            return Action.LOOK_DOWN

    t, s = run(corridor, corridor_graph, Pose(0, 0, 180, 30), Spin())
    assert t.outcome is Outcome.FAIL_TIMEOUT
    assert not s.entered_pathfinding and s.Lnav == 0 and s.L == 0


def test_shortest_success_matches_oracle(corridor, corridor_graph):
    t, s = run(corridor, corridor_graph, Pose(0, 0, 0, 0))
    assert s.success and s.L == s.Lstar == 1.0
    target_cells = {(2, 0), (3, 0)}
    assert s.Lstar == brute_cell_path(corridor, (0, 0), target_cells)


def test_divide_at_step_zero(corridor, corridor_graph):
    t, s = run(corridor, corridor_graph, Pose(0, 0, 0, 0))
    assert s.divide_step == 0 and s.Lsearch == 0 and s.LstarSearch == 0
    assert s.Lnav == s.L


def test_split_lengths(open_room):
    g = build_graph(open_room)
    t, s = run(open_room, g, Pose(2, 2, 180, 0))
    assert s.L == pytest.approx(s.Lsearch + s.Lnav)
    assert s.success and s.entered_pathfinding
    crit = criterion_cells(g, open_room.objects[0], DetectorConfig(), 0.7)
    assert s.LstarSearch == pytest.approx(brute_cell_path(open_room, (2, 2), crit))


def test_running_episode_is_malformed(corridor, corridor_graph):
    env = NavEnv(corridor, corridor.objects[0], graph=corridor_graph)
    env.reset(Pose(0, 0, 0, 0))
    env.step(Action.ROTATE_LEFT)
    with pytest.raises(MalformedLogError):
        summarize(env.trajectory(), corridor, corridor.objects[0], graph=corridor_graph)


def test_csv_formats(tmp_path):
    r = compute_report([summ(True, True, L=1, Lstar=1, Ls=1, Lss=1, Ln=0, Lsn=0), summ()])
    write_metrics_csv(r, tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0][:3] == ["metric", "value", "count"]
    assert rows[1] == ["SR", "0.500000", "2", "0.353553"]
    assert [row[0] for row in rows[1:]] == ["SR", "SPL", "SSR", "SSSPL", "NSNPL"]
    write_episode_csv([summ()], tmp_path / "e.csv")
    lines = open(tmp_path / "e.csv").read().splitlines()
    assert lines[0].startswith("episode_id,scene_id,target,success")
    assert ",1.000000," in lines[1]


def test_absent_nsnpl_written_blank(tmp_path):
    write_metrics_csv(compute_report([summ()]), tmp_path / "m.csv")
    assert open(tmp_path / "m.csv").read().splitlines()[-1] == "NSNPL,,0,"


def test_log_round_trip(open_room):
    g = build_graph(open_room)
    env = NavEnv(open_room, open_room.objects[0], graph=g)
    t = run_episode(env, OraclePolicy(), seed=3, episode_id=42)
    back, = parse_trajectories(list(trajectory_lines(t)))
    assert back.steps == t.steps and back.outcome is t.outcome and back.divide_step == t.divide_step
    assert back.episode_id == 42 and back.start_pose == t.start_pose
    assert summarize(back, open_room, open_room.objects[0], graph=g) == \
        summarize(t, open_room, open_room.objects[0], graph=g)


@pytest.mark.parametrize("mutate", ["drop_close", "bad_json", "bad_pose", "bad_outcome", "orphan_step"])
def test_malformed_logs(corridor, corridor_graph, mutate):
    t, _ = run(corridor, corridor_graph, Pose(0, 0, 0, 0))
    lines = list(trajectory_lines(t))
    if mutate == "drop_close":
        lines = lines[:-1]
    elif mutate == "bad_json":
        lines[1] = lines[1][:-5]
    elif mutate == "bad_pose":
        lines[1] = lines[1].replace('"i": 1', '"i": "x"')
    elif mutate == "bad_outcome":
        lines[-1] = lines[-1].replace("Success", "Maybe")
    else:
        lines = lines[1:]
    with pytest.raises(MalformedLogError):
        parse_trajectories(lines)


def test_log_line_schema(corridor, corridor_graph):
    import json
    t, _ = run(corridor, corridor_graph, Pose(0, 0, 0, 0))
    lines = [json.loads(x) for x in trajectory_lines(t)]
    step = lines[1]
    for key in ("episodeId", "sceneId", "target", "step", "action", "stage", "confidence", "pose", "reward",
                "areaGain"):
        assert key in step
    assert set(step["reward"]) == {"explore", "distance", "collision", "slack", "final"}
    assert {"outcome", "pathLengthMeters", "divideStep"} <= set(lines[-1])
    assert lines[-1]["pathLengthMeters"] == 1.0
