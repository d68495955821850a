"""Command-line entry point: ``tsrm <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .experiment import (ConfigError, ExperimentConfig, SceneSource, interior_optimum, load_config, run_eval,
                         run_sweep, run_train, to_dict, write_provenance)
from .scene import SceneError, dumps_scene, generate_scene

log = logging.getLogger("tsrm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _on_off(v: str) -> bool:
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


def _pair(kind):
    def parse(v: str):
        try:
            a, b = (kind(x) for x in v.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected MIN,MAX, got {v!r}") from None
        return (a, b)
    return parse


def _floats(v: str) -> tuple[float, ...]:
    if not v.strip():
        return ()
    try:
        return tuple(float(x) for x in v.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {v!r}") from None


def _common(p: argparse.ArgumentParser, scenes_help: str = "glob of scene files") -> None:
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--episodes", type=int)
    p.add_argument("--scenes", help=scenes_help)
    p.add_argument("--reward.explore", dest="reward_explore", type=_on_off, metavar="on|off")
    p.add_argument("--reward.distance", dest="reward_distance", type=_on_off, metavar="on|off")
    p.add_argument("--detector.model", dest="detector_model", metavar="NAME")
    p.add_argument("--ctarget", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tsrm", description="Two-stage reward navigation simulator")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("scene-gen", help="generate scene files and a manifest")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None, help="first scene seed")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--room-size", type=_pair(float), metavar="MIN,MAX")
    p.add_argument("--obstacles", type=_pair(int), metavar="MIN,MAX")
    p.add_argument("--objects", type=_pair(int), metavar="MIN,MAX")
    p.add_argument("--grid-step", type=float)

    p = sub.add_parser("train", help="train the actor-critic agent")
    _common(p, "glob of training scene files")
    p.add_argument("--eval-scenes", help="glob of held-out scenes for learning curves")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint or builtin policy")
    _common(p, "glob of evaluation scene files")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--policy", help="builtin policy: random, oracle or coverage")

    p = sub.add_parser("sweep-threshold", help="evaluate across dividing thresholds")
    _common(p, "glob of evaluation scene files")
    p.add_argument("--thresholds", type=_floats, help="comma-separated C_target values")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--policy")

    p = sub.add_parser("replay", help="re-simulate a trajectory log, verify it and recompute metrics")
    p.add_argument("log", help="trajectories.jsonl")
    p.add_argument("--config", help="config used for the run (default: config.resolved.json beside the log)")
    p.add_argument("--scenes", help="glob of scene files (default: the config's evaluation scenes)")
    p.add_argument("--out", help="write recomputed metrics here")
    return ap


def _resolve(args, *, episodes_field: str, scenes_field: str) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, **({"seed": args.seed} if episodes_field == "agent" else {"eval_seed": args.seed}))
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg = replace(cfg, workers=args.workers)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if args.episodes is not None:
        if args.episodes < 1:
            raise UsageError("--episodes must be >= 1")
        if episodes_field == "agent":
            cfg = replace(cfg, agent=replace(cfg.agent, episodes=args.episodes))
        else:
            cfg = replace(cfg, eval_episodes=args.episodes)
    if args.scenes is not None:
        cfg = replace(cfg, **{scenes_field: SceneSource(glob=args.scenes)})
    reward = cfg.reward
    if args.reward_explore is not None:
        reward = replace(reward, explore=args.reward_explore)
    if args.reward_distance is not None:
        reward = replace(reward, distance=args.reward_distance)
    if args.ctarget is not None:
        if not 0 <= args.ctarget < 1:
            raise UsageError("--ctarget must lie in [0, 1)")
        reward = replace(reward, c_target=args.ctarget)
    cfg = replace(cfg, reward=reward)
    if args.detector_model is not None:
        try:
            cfg = replace(cfg, detector=replace(cfg.detector, model=args.detector_model))
        except ValueError as e:
            raise UsageError(str(e)) from e
    return cfg


def _invocation(argv: Sequence[str]) -> dict:
    return {"argv": list(argv)}


def cmd_scene_gen(args, argv) -> int:
    cfg = load_config(args.config)
    params = cfg.train_scenes.params
    try:
        if args.room_size is not None:
            params = replace(params, width_range=args.room_size, depth_range=args.room_size)
        if args.obstacles is not None:
            params = replace(params, obstacle_count=args.obstacles)
        if args.objects is not None:
            params = replace(params, object_count=args.objects)
        if args.grid_step is not None:
            params = replace(params, config=replace(params.config, grid_step=args.grid_step))
    except (ValueError, SceneError) as e:
        raise UsageError(f"invalid generation parameters: {e}") from e
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    start = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(args.count):
        scene = generate_scene(start + k, params)
        text = dumps_scene(scene)
        name = f"{scene.id}.json"
        (out / name).write_text(text, encoding="utf-8")
        entries.append({"file": name, "id": scene.id, "seed": start + k,
                        "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest()})
    manifest = {"firstSeed": start, "count": args.count, "params": to_dict(params), "scenes": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    resolved = replace(cfg, seed=start, out=str(out), train_scenes=SceneSource(start=start, count=args.count,
                                                                                params=params))
    write_provenance(resolved, out, _invocation(argv))
    log.info("wrote %d scenes to %s", args.count, out)
    return 0


def cmd_train(args, argv) -> int:
    cfg = _resolve(args, episodes_field="agent", scenes_field="train_scenes")
    if args.eval_scenes:
        cfg = replace(cfg, eval_scenes=SceneSource(glob=args.eval_scenes))
    out = Path(cfg.out)
    write_provenance(cfg, out, _invocation(argv))
    res = run_train(cfg, out, resume=args.resume, log=log.info)
    log.info("trained %d episodes; checkpoint at %s", res.episodes_done, out / "checkpoint.json")
    return 0


def _policy_arg(args, cfg: ExperimentConfig) -> ExperimentConfig:
    if getattr(args, "checkpoint", None):
        if not Path(args.checkpoint).exists():
            raise ConfigError(f"checkpoint {args.checkpoint} does not exist")
        return replace(cfg, policy=args.checkpoint)
    if getattr(args, "policy", None):
        return replace(cfg, policy=args.policy)
    return cfg


def cmd_eval(args, argv) -> int:
    cfg = _policy_arg(args, _resolve(args, episodes_field="eval", scenes_field="eval_scenes"))
    out = Path(cfg.out)
    write_provenance(cfg, out, _invocation(argv))
    res = run_eval(cfg, out)
    r = res.all
    nsnpl = "n/a" if r.NSNPL is None else f"{r.NSNPL:.4f}"
    print(f"SR {r.SR:.4f}  SPL {r.SPL:.4f}  SSR {r.SSR:.4f}  SSSPL {r.SSSPL:.4f}  NSNPL {nsnpl}  (K={r.K})")
    return 0


def cmd_sweep(args, argv) -> int:
    cfg = _policy_arg(args, _resolve(args, episodes_field="eval", scenes_field="eval_scenes"))
    thresholds = cfg.thresholds if args.thresholds is None else args.thresholds
    if not thresholds:
        raise UsageError("--thresholds must list at least one value")
    if not all(0 <= t < 1 for t in thresholds):
        raise UsageError("thresholds must lie in [0, 1)")
    cfg = replace(cfg, thresholds=tuple(thresholds))
    if cfg.detector.model == "binary":
        log.warning("warning: a binary detector makes every threshold in (0, 1) equivalent up to noise; "
                    "use --detector.model linear-falloff")
    out = Path(cfg.out)
    write_provenance(cfg, out, _invocation(argv))
    res = run_sweep(cfg, thresholds, out, log=log.info)
    for seed in cfg.sweep_seeds:
        if len(thresholds) >= 3:
            best = interior_optimum(res, thresholds, seed)
            log.info("seed %d: interior SR optimum %s", seed, "none" if best is None else best)
    return 0


def cmd_replay(args, argv) -> int:
    from .replay import replay_log

    cfg_path = args.config
    if cfg_path is None:
        guess = Path(args.log).parent / "config.resolved.json"
        cfg_path = str(guess) if guess.exists() else None
    cfg = load_config(cfg_path) if cfg_path else ExperimentConfig()
    if args.scenes:
        cfg = replace(cfg, eval_scenes=SceneSource(glob=args.scenes))
    report = replay_log(args.log, cfg, Path(args.out) if args.out else None)
    r = report.all
    nsnpl = "n/a" if r.NSNPL is None else f"{r.NSNPL:.4f}"
    print(f"verified {r.K} episodes: SR {r.SR:.4f}  SPL {r.SPL:.4f}  SSR {r.SSR:.4f}  SSSPL {r.SSSPL:.4f}  "
          f"NSNPL {nsnpl}")
    return 0


_COMMANDS = {"scene-gen": cmd_scene_gen, "train": cmd_train, "eval": cmd_eval, "sweep-threshold": cmd_sweep,
             "replay": cmd_replay}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # argparse usage errors and --help
        return int(e.code or 0)
    try:
        return _COMMANDS[args.cmd](args, argv)
    except UsageError as e:
        print(f"tsrm {args.cmd}: usage error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, SceneError, ValueError, OSError, RuntimeError, KeyError) as e:
        print(f"tsrm {args.cmd}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
