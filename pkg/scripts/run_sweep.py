"""Threshold sweep with the noisy linear-falloff detector; prints SR per threshold.

    python scripts/run_sweep.py [--config configs/sweep.json] [--out runs/sweep]
"""

import argparse
import logging
from pathlib import Path

from tsrm.experiment import interior_optimum, load_config, run_sweep, write_provenance


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/sweep.json")
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = load_config(args.config)
    out = Path(args.out or cfg.out)
    write_provenance(cfg, out)
    res = run_sweep(cfg, cfg.thresholds, out, log=logging.info)
    for seed in cfg.sweep_seeds:
        row = "  ".join(f"{res[(t, seed)].SR:.3f}" for t in cfg.thresholds)
        print(f"seed {seed}: SR {row}  interior optimum: {interior_optimum(res, cfg.thresholds, seed)}")


if __name__ == "__main__":
    main()
