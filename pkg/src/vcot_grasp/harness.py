"""Evaluation protocol and experiment grids (ablation, scaling, epochs, robustness)."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .codec import N_BINS, decode_box, encode_box, encode_grasp
from .geometry import grasp_success
from .model.network import GraspNet, ModelConfig
from .model.train import TrainConfig, make_examples, train
from .scenegen import DatasetConfig, ObjectSpec, Scene, gen_dataset, instruction_of, split_of
from .vcot import square_expand, to_crop_frame, run_pipeline

log = logging.getLogger(__name__)

ROBUSTNESS_VARIANTS = ("original", "background", "distractors")


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    dataset_path: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    vcot: tuple[bool, ...] = (True, False)
    heads: tuple[str, ...] = ("token",)
    data_fractions: tuple[float, ...] = (0.10, 0.25, 0.50, 1.0)
    epochs_sweep: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7, 8)
    robustness: tuple[str, ...] = ROBUSTNESS_VARIANTS
    held_out_backgrounds: tuple[int, ...] = (3, 4)
    seeds: tuple[int, ...] = (0, 1, 2)

    def validate(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if any(not 0 < f <= 1 for f in self.data_fractions):
            raise ValueError("data fractions must lie in (0, 1]")
        if any(h not in ("token", "regression") for h in self.heads):
            raise ValueError(f"unknown head in {self.heads}")
        if any(v not in ROBUSTNESS_VARIANTS for v in self.robustness):
            raise ValueError(f"unknown robustness variant in {self.robustness}")
        if any(e < 1 for e in self.epochs_sweep):
            raise ValueError("epochs_sweep entries must be >= 1")
        self.dataset.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d, default=list))

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "dataset" in d:
            d["dataset"] = DatasetConfig.from_dict(d["dataset"])
        if "model" in d:
            d["model"] = ModelConfig(**d["model"])
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        for k in ("vcot", "heads", "data_fractions", "epochs_sweep", "robustness", "held_out_backgrounds", "seeds"):
            if k in d:
                d[k] = tuple(d[k])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class EvalReport:
    success_rate_seen: Optional[float]
    success_rate_unseen: Optional[float]
    success_rate_avg: float
    success_rate_macro: Optional[float]
    successes: dict
    trials: dict
    per_category: dict
    fingerprint: str = ""
    seeds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _rate(s: int, t: int) -> Optional[float]:
    return s / t if t else None


def evaluate(
    model,
    scenes: Sequence[Scene],
    mode: str = "vcot",
    fingerprint: str = "",
    seeds: Sequence[int] = (),
    margin: float = 0.1,
) -> EvalReport:
    """Grasp success over every (scene, target) pair; seen/unseen by scene split."""
    pairs = [(s, o) for s in scenes for o in s.targets()]
    if not pairs:
        raise ValueError("empty split: nothing to evaluate")
    succ = {"seen": 0, "unseen": 0}
    trials = {"seen": 0, "unseen": 0}
    per_cat: dict[int, list[int]] = {}
    for scene, obj in pairs:
        pred, _ = run_pipeline(model, scene.image, instruction_of(obj), mode, margin=margin)
        ok = grasp_success(pred, obj.grasps)
        key = "unseen" if scene.split == "test_unseen" else "seen"
        succ[key] += ok
        trials[key] += 1
        c = per_cat.setdefault(obj.category_id, [0, 0])
        c[0] += ok
        c[1] += 1
    seen, unseen = _rate(succ["seen"], trials["seen"]), _rate(succ["unseen"], trials["unseen"])
    macro = None if seen is None or unseen is None else 0.5 * (seen + unseen)
    return EvalReport(
        success_rate_seen=seen,
        success_rate_unseen=unseen,
        success_rate_avg=sum(succ.values()) / sum(trials.values()),
        success_rate_macro=macro,
        successes=succ,
        trials=trials,
        per_category={str(k): per_cat[k] for k in sorted(per_cat)},
        fingerprint=fingerprint,
        seeds=list(seeds),
    )


# --- reference models -----------------------------------------------------


class OracleModel:
    """Emits the ground-truth tokens (or values) of the instructed object.

    Scenes are recognized by their image bytes; the crop frame is recomputed
    from the oracle's own quantized box, exactly as the pipeline does.
    """

    def __init__(self, scenes: Sequence[Scene], head_kind: str = "token", margin: float = 0.1):
        self.head_kind = head_kind
        self.image_side = scenes[0].image.shape[0]
        self.margin = margin
        self._by_image = {s.image.tobytes(): s for s in scenes}

    def _target(self, image, condition) -> ObjectSpec:
        scene = self._by_image[np.asarray(image).tobytes()]
        cat = condition // 2
        for o in scene.targets():
            if o.category_id == cat:
                return o
        raise KeyError(f"no object of category {cat} in scene")

    def box_logits(self, image, condition):
        obj = self._target(image, condition)
        return _one_hot(encode_box(obj.bbox, self.image_side, self.image_side).bins)

    def grasp_output(self, image, crop, condition):
        obj = self._target(image, condition)
        side = self.image_side
        g = obj.target_grasp
        if crop is not None:
            box = decode_box(encode_box(obj.bbox, side, side), side, side)
            g = to_crop_frame(g, square_expand(box, side, side, self.margin, side))
        if self.head_kind == "regression":
            return np.array(g.as_list())
        return _one_hot(encode_grasp(g, side, side).bins)


class ConstantModel:
    """Predicts the same tokens whatever the input."""

    def __init__(self, box_bins, grasp_bins, image_side: int = 64):
        self.head_kind = "token"
        self.image_side = image_side
        self._box = _one_hot(box_bins)
        self._grasp = _one_hot(grasp_bins)

    def box_logits(self, image, condition):
        return self._box

    def grasp_output(self, image, crop, condition):
        return self._grasp


def _one_hot(bins) -> np.ndarray:
    out = np.zeros((len(bins), N_BINS))
    out[np.arange(len(bins)), list(bins)] = 1.0
    return out


# --- experiment plumbing --------------------------------------------------


class Bench:
    """Holds the generated dataset and memoizes trained cells within one experiment."""

    def __init__(self, cfg: ExperimentConfig, dataset: Optional[Sequence[Scene]] = None):
        cfg.validate()
        self.cfg = cfg
        if dataset is None:
            if cfg.dataset_path:
                from .scenegen import load_dataset

                dataset = load_dataset(cfg.dataset_path)
            else:
                dataset = gen_dataset(cfg.dataset)
        self.dataset = list(dataset)
        self.train_scenes = split_of(self.dataset, "train")
        self.test_scenes = split_of(self.dataset, "test_seen") + split_of(self.dataset, "test_unseen")
        if not self.train_scenes:
            raise ValueError("dataset has no train scenes")
        self._cache: dict = {}
        self._examples: dict = {}

    def subset(self, fraction: float) -> list[Scene]:
        """Nested train subsets: prefixes of one seeded shuffle."""
        n = int(round(fraction * len(self.train_scenes)))
        if n < 1:
            raise ValueError(f"fraction {fraction} leaves no training scenes")
        order = np.random.default_rng([self.cfg.dataset.seed, 7]).permutation(len(self.train_scenes))
        return [self.train_scenes[i] for i in sorted(order[:n])]

    def configs(self, vcot: bool, head: str, seed: int, epochs: Optional[int] = None):
        mc = replace(self.cfg.model, head_kind=head, seed=seed)
        tc = replace(self.cfg.train, vcot=vcot, seed=seed)
        if epochs is not None:
            tc = replace(tc, epochs=epochs)
        return mc, tc

    def train_cell(self, vcot: bool, head: str, seed: int, fraction: float = 1.0,
                   epochs: Optional[int] = None, eval_epochs: Sequence[int] = ()):
        """Train one grid cell; returns (net, log rows, {epoch: EvalReport})."""
        key = (vcot, head, seed, fraction, epochs, tuple(eval_epochs))
        if key in self._cache:
            return self._cache[key]
        mc, tc = self.configs(vcot, head, seed, epochs)
        ex_key = (vcot, fraction)
        if ex_key not in self._examples:
            self._examples[ex_key] = make_examples(self.subset(fraction), mc.image_side, vcot, tc.margin)
        mode = "vcot" if vcot else "single_turn"
        reports = {}

        def on_epoch(epoch, params):
            if epoch not in eval_epochs:
                return {}
            rep = evaluate(GraspNet(mc, params), self.test_scenes, mode, self.cfg.fingerprint, [seed], tc.margin)
            reports[epoch] = rep
            return {"seen": rep.success_rate_seen, "unseen": rep.success_rate_unseen, "avg": rep.success_rate_avg}

        log.info("training cell vcot=%s head=%s seed=%s fraction=%s", vcot, head, seed, fraction)
        params, rows = train(mc, tc, self.dataset, on_epoch=on_epoch, examples=self._examples[ex_key])
        out = (GraspNet(mc, params), rows, reports)
        self._cache[key] = out
        return out

    def evaluate_cell(self, vcot: bool, head: str, seed: int, fraction: float = 1.0) -> EvalReport:
        net, _, _ = self.train_cell(vcot, head, seed, fraction)
        return evaluate(net, self.test_scenes, "vcot" if vcot else "single_turn",
                        self.cfg.fingerprint, [seed], self.cfg.train.margin)


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return sum(xs) / len(xs) if xs else None


ABLATION_HEADER = ("row", "vcot", "head", "seed", "seen", "unseen", "avg",
                   "seen_succ", "seen_trials", "unseen_succ", "unseen_trials", "fingerprint")


def run_ablation(cfg: ExperimentConfig, bench: Optional[Bench] = None) -> dict:
    """Train and evaluate every (vcot, head) cell per seed.

    Returns {"rows": per-seed dicts, "means": per-cell dicts, "csv": text}.
    """
    bench = bench or Bench(cfg)
    fp = cfg.fingerprint
    rows, means, lines = [], [], []
    for vcot in cfg.vcot:
        for head in cfg.heads:
            cell = []
            for seed in cfg.seeds:
                rep = bench.evaluate_cell(vcot, head, seed)
                r = {
                    "vcot": vcot, "head": head, "seed": seed,
                    "seen": rep.success_rate_seen, "unseen": rep.success_rate_unseen, "avg": rep.success_rate_avg,
                    "successes": rep.successes, "trials": rep.trials,
                }
                cell.append(r)
                lines.append(("seed", int(vcot), head, seed, r["seen"], r["unseen"], r["avg"],
                              rep.successes["seen"], rep.trials["seen"],
                              rep.successes["unseen"], rep.trials["unseen"], fp))
            m = {k: _mean([r[k] for r in cell]) for k in ("seen", "unseen", "avg")}
            m.update(vcot=vcot, head=head)
            means.append(m)
            lines.append(("mean", int(vcot), head, "mean", m["seen"], m["unseen"], m["avg"],
                          sum(r["successes"]["seen"] for r in cell), sum(r["trials"]["seen"] for r in cell),
                          sum(r["successes"]["unseen"] for r in cell), sum(r["trials"]["unseen"] for r in cell), fp))
            rows += cell
    return {"rows": rows, "means": means, "csv": to_csv(ABLATION_HEADER, lines), "fingerprint": fp,
            "seeds": list(cfg.seeds)}


CURVE_HEADER = ("x", "seed", "n_train_scenes", "seen", "unseen", "avg", "succ", "trials", "fingerprint")


def _curve_row(x, seed, n, rep: EvalReport, fp):
    return (x, seed, n, rep.success_rate_seen, rep.success_rate_unseen, rep.success_rate_avg,
            sum(rep.successes.values()), sum(rep.trials.values()), fp)


def run_scaling(cfg: ExperimentConfig, bench: Optional[Bench] = None, vcot: bool = True,
                head: Optional[str] = None) -> dict:
    """Success versus training-set fraction (nested subsets), one row per (fraction, seed)."""
    bench = bench or Bench(cfg)
    head = head or cfg.heads[0]
    fp = cfg.fingerprint
    rows = []
    for frac in sorted(cfg.data_fractions):
        n = len(bench.subset(frac))
        for seed in cfg.seeds:
            rows.append(_curve_row(float(frac), seed, n, bench.evaluate_cell(vcot, head, seed, frac), fp))
    return {"rows": rows, "csv": to_csv(CURVE_HEADER, rows), "fingerprint": fp, "seeds": list(cfg.seeds)}


def run_epochs(cfg: ExperimentConfig, bench: Optional[Bench] = None, vcot: bool = True,
               head: Optional[str] = None) -> dict:
    """Success after each epoch of one run lasting ``max(epochs_sweep)`` epochs."""
    bench = bench or Bench(cfg)
    head = head or cfg.heads[0]
    fp = cfg.fingerprint
    sweep = sorted(set(cfg.epochs_sweep))
    n = len(bench.train_scenes)
    rows = []
    for seed in cfg.seeds:
        _, _, reports = bench.train_cell(vcot, head, seed, epochs=max(sweep), eval_epochs=sweep)
        for e in sweep:
            rows.append(_curve_row(e, seed, n, reports[e], fp))
    rows.sort(key=lambda r: (r[0], r[1]))
    return {"rows": rows, "csv": to_csv(CURVE_HEADER, rows), "fingerprint": fp, "seeds": list(cfg.seeds)}


def robustness_scenes(cfg: ExperimentConfig, variant: str, base: Sequence[Scene]) -> list[Scene]:
    """Test scenes for one robustness variant; same objects, new background or extra distractors."""
    tests = [s for s in base if s.split != "train"]
    if variant == "original":
        return tests
    dc = replace(cfg.dataset, splits=("test_seen", "test_unseen"))
    if variant == "background":
        dc = replace(dc, background_set=tuple(cfg.held_out_backgrounds))
    elif variant == "distractors":
        dc = replace(dc, distractors=True)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return gen_dataset(dc)


ROBUST_HEADER = ("row", "seed", "variant", "successes", "trials", "fraction", "rate", "fingerprint")


def run_robustness(cfg: ExperimentConfig, bench: Optional[Bench] = None, vcot: bool = True,
                   head: Optional[str] = None, model_for_seed=None) -> dict:
    """Evaluate one trained model per seed on the original, background and distractor variants."""
    bench = bench or Bench(cfg)
    head = head or cfg.heads[0]
    mode = "vcot" if vcot else "single_turn"
    fp = cfg.fingerprint
    variants = {v: robustness_scenes(cfg, v, bench.dataset) for v in cfg.robustness}
    lines, table = [], {}
    for seed in cfg.seeds:
        net = model_for_seed(seed) if model_for_seed else bench.train_cell(vcot, head, seed)[0]
        for v, scenes in variants.items():
            rep = evaluate(net, scenes, mode, fp, [seed], cfg.train.margin)
            s, t = sum(rep.successes.values()), sum(rep.trials.values())
            table.setdefault(v, []).append((s, t))
            lines.append(("seed", seed, v, s, t, f"{s}/{t}", s / t, fp))
    for v, st in table.items():
        s, t = sum(a for a, _ in st), sum(b for _, b in st)
        lines.append(("total", "all", v, s, t, f"{s}/{t}", s / t, fp))
    return {"table": {v: [list(x) for x in st] for v, st in table.items()},
            "csv": to_csv(ROBUST_HEADER, lines), "fingerprint": fp, "seeds": list(cfg.seeds)}


def pooled_se(succ: int, trials: int) -> float:
    p = succ / trials
    return math.sqrt(p * (1 - p) / trials)
