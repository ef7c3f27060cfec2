"""Run the experiment grids on one shared Bench and write CSV/JSON under --out.

    python scripts/run_grid.py ablation scaling epochs robustness [--config cfg.json] [--out results/grid]

Cells trained for one grid are reused by the others (same config, seed, fraction).
"""

import argparse
import json
import logging
from pathlib import Path

from vcot_grasp import harness
from vcot_grasp.harness import Bench, ExperimentConfig

GRIDS = {
    "ablation": (harness.run_ablation, "ablation.csv"),
    "scaling": (harness.run_scaling, "scaling.csv"),
    "epochs": (harness.run_epochs, "epochs.csv"),
    "robustness": (harness.run_robustness, "robustness.csv"),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("grids", nargs="+", choices=sorted(GRIDS))
    ap.add_argument("--config")
    ap.add_argument("--out", default="results/grid")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    bench = Bench(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    for name in args.grids:
        fn, fname = GRIDS[name]
        res = fn(cfg, bench)
        (out / fname).write_text(res["csv"])
        print(f"== {name}\n{res['csv']}", end="")


if __name__ == "__main__":
    main()
