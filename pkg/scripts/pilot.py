"""Desk-scale pilot: VCoT token-head model, 2000 train scenes, per-epoch eval.

Writes results/pilot.json with the training log, per-epoch success rates and
wall-clock time. This run fixes the end-to-end success threshold.

    python scripts/pilot.py [--seed 0] [--epochs 5] [--lr 3e-4] [--out results]
"""

import argparse
import json
import logging
import time
from dataclasses import replace
from pathlib import Path

from vcot_grasp.harness import Bench, ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--lr", type=float, default=None)
    ap.add_argument("--mode", choices=("vcot", "single_turn"), default="vcot")
    ap.add_argument("--head", choices=("token", "regression"), default="token")
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = ExperimentConfig(seeds=(args.seed,))
    if args.lr is not None:
        cfg = replace(cfg, train=replace(cfg.train, lr=args.lr))
    cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    bench = Bench(cfg)
    t0 = time.perf_counter()
    _, rows, reports = bench.train_cell(args.mode == "vcot", args.head, args.seed,
                                        eval_epochs=range(1, args.epochs + 1))
    wall = time.perf_counter() - t0
    out = {
        "config": cfg.to_dict(),
        "fingerprint": cfg.fingerprint,
        "mode": args.mode,
        "head": args.head,
        "seed": args.seed,
        "n_train_scenes": len(bench.train_scenes),
        "wall_seconds_incl_eval": round(wall, 1),
        "log": rows,
        "per_epoch": {e: r.to_dict() for e, r in sorted(reports.items())},
    }
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    name = f"pilot_{args.mode}_{args.head}_s{args.seed}.json"
    (path / name).write_text(json.dumps(out, sort_keys=True, indent=2) + "\n")
    for r in rows:
        print(f"epoch {r['epoch']}: loss {r['loss']:.4f} box {r['box_loss']:.4f} grasp {r['grasp_loss']:.4f} "
              f"seen {r['seen']:.4f} unseen {r['unseen']:.4f}")
    print(f"wrote {path / name} ({wall / 60:.1f} min)")


if __name__ == "__main__":
    main()
