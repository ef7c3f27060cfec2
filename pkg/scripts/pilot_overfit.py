"""Fixed-batch overfit pilot: summed slot cross-entropy versus step for a few step sizes.

Picks the step size used by the optimization-sanity acceptance check.

    python scripts/pilot_overfit.py [--steps 500] [--lrs 3e-4 1e-3 3e-3] [--out results]
"""

import argparse
import json
import math
from pathlib import Path

import numpy as np

from vcot_grasp.model.network import ModelConfig, init_params
from vcot_grasp.model.train import make_examples, train_steps
from vcot_grasp.scenegen import DatasetConfig, gen_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lrs", type=float, nargs="+", default=[3e-4, 1e-3, 3e-3])
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    cfg = ModelConfig()
    scenes = gen_dataset(DatasetConfig(n_scenes=40, n_test_seen=0, n_test_unseen=0, seed=6))
    batch = make_examples(scenes, cfg.image_side, vcot=True).batch(np.arange(32))
    out = {"init_expected": 9 * math.log(1024), "runs": {}}
    for lr in args.lrs:
        hist = [h["slot_ce_sum"] for h in train_steps(init_params(cfg), cfg, batch, args.steps, lr=lr)]
        hit = next((i + 1 for i, v in enumerate(hist) if v < 0.05), None)
        out["runs"][str(lr)] = {"first_step_below_0.05": hit, "final": hist[-1], "curve_every_25": hist[::25]}
        print(f"lr {lr:g}: init {hist[0]:.4f}, final {hist[-1]:.4f}, below 0.05 at step {hit}")
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    (path / "pilot_overfit.json").write_text(json.dumps(out, indent=2) + "\n")


if __name__ == "__main__":
    main()
