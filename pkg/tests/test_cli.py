import csv
import json
import logging
import subprocess
import sys
import time

import pytest

from tsrm.cli import main
from tsrm.experiment import ConfigError, ExperimentConfig, dumps_config, from_dict, load_config, to_dict


def files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "config.resolved.json"}


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    d = tmp_path_factory.mktemp("scenes")
    assert main(["scene-gen", "--seed", "40", "--count", "3", "--room-size", "3,4", "--out", str(d)]) == 0
    return d


def write_cfg(path, **kw):
    path.write_text(json.dumps(kw))
    return str(path)


def test_scene_gen_outputs(scenes, tmp_path):
    names = sorted(p.name for p in scenes.iterdir())
    assert names == ["config.resolved.json", "manifest.json", "scene-40.json", "scene-41.json", "scene-42.json"]
    m = json.loads((scenes / "manifest.json").read_text())
    assert [e["seed"] for e in m["scenes"]] == [40, 41, 42]
    again = tmp_path / "again"
    assert main(["scene-gen", "--seed", "40", "--count", "3", "--room-size", "3,4", "--out", str(again)]) == 0
    assert (again / "manifest.json").read_bytes() == (scenes / "manifest.json").read_bytes()
    assert files(again) == files(scenes)


@pytest.mark.parametrize("argv", [["--count", "0"], ["--room-size", "5,2"], ["--objects", "0,0"],
                                  ["--room-size", "x"]])
def test_scene_gen_usage_errors(tmp_path, argv):
    assert main(["scene-gen", "--out", str(tmp_path / "o")] + argv) == 1


def test_eval_oracle_and_determinism(scenes, tmp_path):
    glob = str(scenes / "scene-*.json")
    outs = []
    for k in range(2):
        out = tmp_path / f"e{k}"
        assert main(["eval", "--policy", "oracle", "--scenes", glob, "--episodes", "15", "--seed", "3",
                     "--workers", "1", "--out", str(out)]) == 0
        outs.append(out)
    rows = {r["metric"]: r for r in csv.DictReader(open(outs[0] / "metrics_all.csv"))}
    assert float(rows["SR"]["value"]) == 1.0
    assert 0 < float(rows["SPL"]["value"]) <= 1.0
    assert (outs[0] / "trajectories.jsonl").exists() and (outs[0] / "episodes.csv").exists()
    assert (outs[0] / "config.resolved.json").exists()
    assert files(outs[0]) == files(outs[1])


def test_eval_errors(scenes, tmp_path):
    glob = str(scenes / "scene-*.json")
    assert main(["eval", "--episodes", "0", "--scenes", glob, "--out", str(tmp_path)]) == 1
    assert main(["eval", "--scenes", str(tmp_path / "none*.json"), "--out", str(tmp_path)]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.json"), "--scenes", glob,
                 "--out", str(tmp_path)]) == 2
    assert main(["eval", "--ctarget", "1.5", "--scenes", glob, "--out", str(tmp_path)]) == 1
    assert main(["eval", "--detector.model", "cnn", "--scenes", glob, "--out", str(tmp_path)]) == 1
    assert main(["eval", "--reward.explore", "maybe", "--out", str(tmp_path)]) == 1
    assert main(["bogus"]) == 1


def test_unknown_subcommand_exit_code():
    r = subprocess.run([sys.executable, "-m", "tsrm", "bogus"], capture_output=True, text=True)
    assert r.returncode == 1
    r = subprocess.run([sys.executable, "-m", "tsrm", "eval", "--episodes", "0"], capture_output=True, text=True)
    assert r.returncode == 1 and "usage error" in r.stderr


def test_replay_verifies_log(scenes, tmp_path):
    out = tmp_path / "e"
    assert main(["eval", "--policy", "random", "--scenes", str(scenes / "scene-*.json"), "--episodes", "10",
                 "--out", str(out)]) == 0
    rep = tmp_path / "r"
    assert main(["replay", str(out / "trajectories.jsonl"), "--out", str(rep)]) == 0
    assert (rep / "metrics_all.csv").read_bytes() == (out / "metrics_all.csv").read_bytes()
    # tamper with a reward and replay must fail
    lines = (out / "trajectories.jsonl").read_text().splitlines()
    d = json.loads(lines[1])
    d["reward"]["slack"] = -0.02
    lines[1] = json.dumps(d)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(bad), "--config", str(out / "config.resolved.json")]) == 2


def test_train_smoke_and_resume(scenes, tmp_path):
    one = str(scenes / "scene-40.json")
    cfg = write_cfg(tmp_path / "c.json", agent={"learningRate": 0.1, "episodes": 500, "evalEvery": 250,
                                                "evalEpisodes": 20})
    t = time.perf_counter()
    assert main(["train", "--config", cfg, "--scenes", one, "--eval-scenes", one, "--out", str(tmp_path / "t")]) == 0
    assert time.perf_counter() - t < 60
    curves = list(csv.DictReader(open(tmp_path / "t" / "curves.csv")))
    assert [r["episode"] for r in curves] == ["250", "500"]
    assert main(["train", "--config", cfg, "--scenes", one, "--eval-scenes", one, "--episodes", "750",
                 "--resume", str(tmp_path / "t" / "checkpoint.json"), "--out", str(tmp_path / "t2")]) == 0
    curves = list(csv.DictReader(open(tmp_path / "t2" / "curves.csv")))
    assert [r["episode"] for r in curves] == ["250", "500", "750"]
    # the trained checkpoint evaluates through the same CLI
    assert main(["eval", "--checkpoint", str(tmp_path / "t2" / "checkpoint.json"), "--scenes", one,
                 "--episodes", "5", "--out", str(tmp_path / "ev")]) == 0


def test_train_missing_scenes(tmp_path):
    assert main(["train", "--scenes", str(tmp_path / "nope" / "*.json"), "--episodes", "5",
                 "--out", str(tmp_path / "t")]) == 2


def test_sweep_rows_and_warning(scenes, tmp_path, caplog):
    cfg = write_cfg(tmp_path / "c.json", sweepSeeds=[0])
    with caplog.at_level(logging.WARNING, logger="tsrm"):
        assert main(["sweep-threshold", "--config", cfg, "--scenes", str(scenes / "scene-*.json"),
                     "--thresholds", "0.3,0.5,0.7,0.9", "--episodes", "6", "--policy", "random",
                     "--out", str(tmp_path / "s")]) == 0
    assert any("binary detector" in r.message for r in caplog.records)
    rows = list(csv.DictReader(open(tmp_path / "s" / "sweep.csv")))
    for m in ("SR", "SPL", "SSR", "SSSPL", "NSNPL"):
        assert len([r for r in rows if r["metric"] == m]) == 4
    # shared seeds: with a binary detector every threshold yields identical metrics
    sr = {r["value"] for r in rows if r["metric"] == "SR"}
    assert len(sr) == 1
    assert main(["sweep-threshold", "--thresholds", "", "--out", str(tmp_path / "s2")]) == 1


def test_config_round_trip_and_unknown_keys(tmp_path):
    cfg = ExperimentConfig()
    assert from_dict(ExperimentConfig, json.loads(dumps_config(cfg)), "config") == cfg
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"reward": {"kee": 1}}))
    with pytest.raises(ConfigError, match="kee"):
        load_config(str(p))
    assert to_dict(cfg)["reward"]["ke"] == 0.1
