"""Training examples and the training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..codec import encode_box, encode_grasp
from ..scenegen import Scene, instruction_of
from ..vcot import crop_resize, square_expand, to_crop_frame
from .network import ModelConfig, backward, init_params
from .optim import OptState, Schedule, opt_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch: int = 32
    epochs: int = 5
    warmup_ratio: float = 0.03
    schedule: str = "cosine"
    weight_decay: float = 0.01
    lam: float = 1.0
    seed: int = 0
    vcot: bool = True
    margin: float = 0.1

    def __post_init__(self):
        if not 0 < self.warmup_ratio < 1:
            raise ValueError("warmup_ratio must lie in (0, 1)")
        if self.schedule != "cosine":
            raise ValueError("only the cosine schedule is implemented")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be positive and epochs non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Examples:
    """Stacked (scene, target) training pairs with teacher-forced crops."""

    images: np.ndarray
    crops: Optional[np.ndarray]
    detect: np.ndarray
    grasp: np.ndarray
    box_tokens: np.ndarray
    grasp_tokens: np.ndarray
    grasp_norm: np.ndarray

    def __len__(self):
        return len(self.detect)

    def batch(self, idx) -> dict:
        return {
            "images": self.images[idx],
            "crops": None if self.crops is None else self.crops[idx],
            "detect": self.detect[idx],
            "grasp": self.grasp[idx],
            "box_tokens": self.box_tokens[idx],
            "grasp_tokens": self.grasp_tokens[idx],
            "grasp_norm": self.grasp_norm[idx],
        }


def make_examples(scenes: Sequence[Scene], side: int, vcot: bool = True, margin: float = 0.1) -> Examples:
    """One example per non-distractor object; stage-2 labels live in the crop frame when ``vcot``."""
    images, crops, det, gr, bt, gt, gn = [], [], [], [], [], [], []
    scales = np.array([side, side, side, side, 180.0])
    for scene in scenes:
        if scene.image.shape[:2] != (side, side):
            raise ValueError(f"scene image {scene.image.shape[:2]} does not match model side {side}")
        for obj in scene.targets():
            g = obj.target_grasp
            if vcot:
                spec = square_expand(obj.bbox, side, side, margin=margin, out_side=side)
                crops.append(crop_resize(scene.image, spec))
                g = to_crop_frame(g, spec)
            d, q = instruction_of(obj)
            images.append(scene.image)
            det.append(d)
            gr.append(q)
            bt.append(encode_box(obj.bbox, side, side).bins)
            gt.append(encode_grasp(g, side, side).bins)
            gn.append(np.clip(np.array(g.as_list()) / scales, 0.0, 1.0))
    if not images:
        raise ValueError("empty dataset: no training examples")
    return Examples(
        images=np.stack(images),
        crops=np.stack(crops) if vcot else None,
        detect=np.array(det),
        grasp=np.array(gr),
        box_tokens=np.array(bt),
        grasp_tokens=np.array(gt),
        grasp_norm=np.stack(gn),
    )


EpochCallback = Callable[[int, dict], dict]


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: Sequence[Scene],
    on_epoch: Optional[EpochCallback] = None,
    examples: Optional[Examples] = None,
):
    """Train from scratch on the ``train`` split of ``dataset``.

    ``on_epoch(epoch, params)`` may return extra metrics (e.g. held-out
    success) that get merged into that epoch's log row.
    Returns (params, log rows).
    """
    if examples is None:
        train_scenes = [s for s in dataset if s.split == "train"]
        examples = make_examples(train_scenes, model_cfg.image_side, train_cfg.vcot, train_cfg.margin)
    n = len(examples)
    params = init_params(model_cfg)
    steps_per_epoch = math.ceil(n / train_cfg.batch)
    sched = Schedule(train_cfg.lr, steps_per_epoch * train_cfg.epochs, train_cfg.warmup_ratio)
    state = OptState()
    rows = []
    step = 0
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([train_cfg.seed, epoch]).permutation(n)
        tot = grasp = box = 0.0
        for s in range(steps_per_epoch):
            idx = np.sort(order[s * train_cfg.batch:(s + 1) * train_cfg.batch])
            losses, grads = backward(params, model_cfg, examples.batch(idx), train_cfg.lam)
            opt_step(params, grads, state, step, sched, train_cfg.weight_decay)
            step += 1
            k = len(idx)
            tot += losses["total"] * k
            grasp += losses["grasp"] * k
            box += losses["box"] * k
        row = {
            "epoch": epoch + 1,
            "step": step,
            "loss": tot / n,
            "grasp_loss": grasp / n,
            "box_loss": box / n,
            "lr": sched.lr(step),
        }
        if on_epoch is not None:
            row.update(on_epoch(epoch + 1, params))
        log.info("epoch %d (%.1fs): %s", epoch + 1, time.perf_counter() - t0, row)
        rows.append(row)
    return params, rows


def train_steps(params, model_cfg: ModelConfig, batch: dict, steps: int, lr: float = 3e-4,
                warmup_ratio: float = 0.03, weight_decay: float = 0.01, lam: float = 1.0):
    """Repeated updates on one fixed batch; returns the per-step loss dicts."""
    sched = Schedule(lr, steps, warmup_ratio)
    state = OptState()
    history = []
    for step in range(steps):
        losses, grads = backward(params, model_cfg, batch, lam)
        opt_step(params, grads, state, step, sched, weight_decay)
        history.append(losses)
    return history
