"""Train and evaluate the four reward variants over several seeds.

    python scripts/run_ablation.py [--config configs/ablation.json] [--out runs/ablation]
"""

import argparse
import logging
from pathlib import Path

from tsrm.experiment import METRIC_NAMES, VARIANTS, load_config, mean_metric, run_ablation, write_provenance


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/ablation.json")
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = load_config(args.config)
    out = Path(args.out or cfg.out)
    write_provenance(cfg, out)
    res = run_ablation(cfg, out, log=logging.info)
    print("variant   " + "  ".join(f"{m:>6}" for m in METRIC_NAMES))
    for name in VARIANTS:
        print(f"{name:<9} " + "  ".join(f"{mean_metric(res[name], m):6.3f}" for m in METRIC_NAMES))


if __name__ == "__main__":
    main()
