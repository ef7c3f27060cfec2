"""Command-line entry point: ``python -m vcot_grasp <command> [--config X] [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .harness import Bench, ExperimentConfig
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.gradcheck import gradient_check
from .model.network import GraspNet, ModelConfig
from .model.train import TrainConfig, train
from .refinery import NoisyDetector, dataset_stats, filter_dataset
from .scenegen import gen_dataset, load_dataset, write_dataset

log = logging.getLogger("vcot_grasp")


class ValidationError(Exception):
    pass


def _load_cfg(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def cmd_gen(args):
    cfg = _load_cfg(args)
    dc = cfg.dataset if args.seed is None else replace(cfg.dataset, seed=args.seed)
    scenes = gen_dataset(dc)
    out = _out(args)
    write_dataset(scenes, out, extra={"config": harness.ExperimentConfig(dataset=dc).to_dict()["dataset"]})
    print(f"wrote {len(scenes)} scenes to {out}")


def _data(args, cfg):
    path = args.data or cfg.dataset_path
    if not path:
        raise ValidationError("need --data or dataset_path in the config")
    if not (Path(path) / "manifest.jsonl").exists() and not Path(path).is_file():
        raise ValidationError(f"no manifest.jsonl under {path}")
    return load_dataset(path)


def cmd_refine(args):
    cfg = _load_cfg(args)
    scenes = _data(args, cfg)
    det = NoisyDetector(seed=args.seed or 0, jitter_sigma=args.sigma, fail_prob=args.fail_prob)
    kept, report = filter_dataset(scenes, det, tau=args.tau)
    out = _out(args)
    write_dataset(kept, out)
    report["stats_before"] = dataset_stats(scenes)
    report["stats_after"] = dataset_stats(kept)
    _write_json(out / "report.json", report)
    print(f"kept {report['kept']} / {report['total']} objects")


def _cell_configs(args, cfg: ExperimentConfig):
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    vcot = cfg.vcot[0] if args.mode is None else args.mode == "vcot"
    head = args.head or cfg.heads[0]
    return replace(cfg.model, head_kind=head, seed=seed), replace(cfg.train, vcot=vcot, seed=seed)


def cmd_train(args):
    cfg = _load_cfg(args)
    scenes = _data(args, cfg)
    mc, tc = _cell_configs(args, cfg)
    params, rows = train(mc, tc, scenes)
    out = _out(args)
    meta = {"model": mc.to_dict(), "train": tc.to_dict(), "fingerprint": cfg.fingerprint}
    save_checkpoint(out / "model.ckpt", params, meta)
    _write_json(out / "train_log.json", {"rows": rows, "fingerprint": cfg.fingerprint})
    print(f"final loss {rows[-1]['loss']:.4f}" if rows else "no epochs run")


def cmd_eval(args):
    cfg = _load_cfg(args)
    if not args.ckpt:
        raise ValidationError("eval needs --ckpt")
    params, meta = load_checkpoint(args.ckpt)
    mc = ModelConfig(**meta["model"])
    tc = TrainConfig(**meta["train"])
    scenes = [s for s in _data(args, cfg) if s.split != "train"]
    if args.split:
        scenes = [s for s in scenes if s.split == args.split]
    rep = harness.evaluate(GraspNet(mc, params), scenes, "vcot" if tc.vcot else "single_turn",
                           meta.get("fingerprint", ""), [mc.seed], tc.margin)
    out = _out(args)
    (out / "report.json").write_text(rep.to_json())
    print(json.dumps({k: rep.to_dict()[k] for k in ("success_rate_seen", "success_rate_unseen", "success_rate_avg")}))


def _bench(args, cfg):
    return Bench(cfg, _data(args, cfg) if (args.data or cfg.dataset_path) else None)


def cmd_ablate(args):
    cfg = _load_cfg(args)
    res = harness.run_ablation(cfg, _bench(args, cfg))
    out = _out(args)
    (out / "table.csv").write_text(res.pop("csv"))
    _write_json(out / "results.json", res)
    print((out / "table.csv").read_text(), end="")


def _curve(fn):
    def run(args):
        cfg = _load_cfg(args)
        res = fn(cfg, _bench(args, cfg))
        out = _out(args)
        (out / "curve.csv").write_text(res["csv"])
        print(res["csv"], end="")

    return run


def cmd_robustness(args):
    cfg = _load_cfg(args)
    res = harness.run_robustness(cfg, _bench(args, cfg))
    out = _out(args)
    (out / "table.csv").write_text(res.pop("csv"))
    _write_json(out / "results.json", res)
    print((out / "table.csv").read_text(), end="")


def cmd_gradcheck(args):
    res = gradient_check(seed=args.seed or 0)
    if args.out:
        _write_json(_out(args) / "gradcheck.json", res)
    print(f"max relative error {res['max_rel_error']:.3e} over {res['n_coords']} coordinates")
    if not res["passed"]:
        raise RuntimeError("gradient check failed")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="dataset directory (manifest.jsonl + images)")

    p = argparse.ArgumentParser(prog="vcot-grasp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate a synthetic dataset").set_defaults(fn=cmd_gen)

    r = sub.add_parser("refine", parents=[common, data], help="IoU-filter annotations against a noisy detector")
    r.add_argument("--sigma", type=float, default=0.05)
    r.add_argument("--fail-prob", type=float, default=0.1)
    r.add_argument("--tau", type=float, default=0.25)
    r.set_defaults(fn=cmd_refine)

    t = sub.add_parser("train", parents=[common, data], help="train one model")
    t.add_argument("--mode", choices=("vcot", "single_turn"))
    t.add_argument("--head", choices=("token", "regression"))
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", parents=[common, data], help="evaluate a checkpoint")
    e.add_argument("--ckpt")
    e.add_argument("--split", choices=("test_seen", "test_unseen"))
    e.set_defaults(fn=cmd_eval)

    sub.add_parser("ablate", parents=[common, data], help="vcot x head grid").set_defaults(fn=cmd_ablate)
    sub.add_parser("scaling", parents=[common, data], help="data-fraction curve").set_defaults(
        fn=_curve(harness.run_scaling))
    sub.add_parser("epochs", parents=[common, data], help="per-epoch curve").set_defaults(
        fn=_curve(harness.run_epochs))
    sub.add_parser("robustness", parents=[common, data], help="background/distractor variants").set_defaults(
        fn=cmd_robustness)
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check").set_defaults(
        fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.fn(args)
    except (ValidationError, ValueError, KeyError, TypeError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"failed: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
