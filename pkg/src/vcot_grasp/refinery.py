"""Annotation refinement: drop objects a detector cannot confirm."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .geometry import AxisBox, axis_iou
from .scenegen import N_CATEGORIES, SPLITS, ObjectSpec, Scene

# detector(scene, object index) -> box
Detector = Callable[[Scene, int], AxisBox]


def _random_box(rng: np.random.Generator, side: float) -> AxisBox:
    while True:
        xs = np.sort(rng.uniform(0.0, side, 2))
        ys = np.sort(rng.uniform(0.0, side, 2))
        if xs[0] < xs[1] and ys[0] < ys[1]:
            return AxisBox(float(xs[0]), float(ys[0]), float(xs[1]), float(ys[1]))


def simulate_detector(
    obj: ObjectSpec,
    rng: np.random.Generator,
    jitter_sigma: float = 0.05,
    fail_prob: float = 0.0,
    image_side: float = 64.0,
) -> AxisBox:
    """Noisy stand-in for an open-vocabulary detector.

    With probability ``fail_prob`` the detection is a uniform random box in
    the image. Otherwise each edge moves by Gaussian noise with standard
    deviation ``jitter_sigma`` times the box extent on that axis.
    """
    if jitter_sigma < 0 or not 0.0 <= fail_prob <= 1.0:
        raise ValueError("need jitter_sigma >= 0 and 0 <= fail_prob <= 1")
    if rng.random() < fail_prob:
        return _random_box(rng, image_side)
    b = obj.bbox
    if jitter_sigma == 0:
        return b
    noise = rng.normal(0.0, jitter_sigma, 4) * np.array([b.width, b.height, b.width, b.height])
    x0, y0, x1, y1 = np.array(b.as_list()) + noise
    x0, x1 = sorted((x0, x1))
    y0, y1 = sorted((y0, y1))
    if x0 == x1 or y0 == y1:
        return b
    return AxisBox(float(x0), float(y0), float(x1), float(y1))


@dataclass(frozen=True)
class NoisyDetector:
    """Replayable detector: each (split, scene, object) gets its own random stream.

    Streams are keyed by category, which is unique within a scene, so a
    re-run on an already filtered scene sees the same boxes.
    """

    seed: int = 0
    jitter_sigma: float = 0.05
    fail_prob: float = 0.1

    def rng_for(self, scene: Scene, obj_index: int) -> np.random.Generator:
        cat = scene.objects[obj_index].category_id
        return np.random.default_rng([self.seed, SPLITS.index(scene.split), scene.index, cat])

    def __call__(self, scene: Scene, obj_index: int) -> AxisBox:
        return simulate_detector(
            scene.objects[obj_index],
            self.rng_for(scene, obj_index),
            self.jitter_sigma,
            self.fail_prob,
            image_side=scene.image.shape[1],
        )


def _empty_counts() -> dict:
    return {"kept": 0, "dropped": 0}


def filter_dataset(dataset: Sequence[Scene], detector: Detector, tau: float = 0.25):
    """Keep objects whose detector box reaches IoU ``tau`` with the reference box.

    Only IoU strictly below ``tau`` is dropped. Scenes that lose every object
    are removed. Returns the filtered scenes and a JSON-ready report.
    """
    per_cat: dict[int, dict] = {}
    kept_scenes = []
    for scene in dataset:
        keep = []
        for i, obj in enumerate(scene.objects):
            ok = axis_iou(obj.bbox, detector(scene, i)) >= tau
            counts = per_cat.setdefault(obj.category_id, _empty_counts())
            counts["kept" if ok else "dropped"] += 1
            if ok:
                keep.append(obj)
        if keep:
            kept_scenes.append(replace(scene, objects=keep))
    kept = sum(c["kept"] for c in per_cat.values())
    dropped = sum(c["dropped"] for c in per_cat.values())
    report = {
        "tau": tau,
        "kept": kept,
        "dropped": dropped,
        "total": kept + dropped,
        "scenes_in": len(dataset),
        "scenes_out": len(kept_scenes),
        "per_category": {str(c): per_cat[c] for c in sorted(per_cat)},
    }
    return kept_scenes, report


def dataset_stats(dataset: Sequence[Scene]) -> dict:
    """Per-category object counts, grasps per image and split sizes."""
    cats: Counter = Counter()
    splits: Counter = Counter()
    n_grasps = 0
    for scene in dataset:
        splits[scene.split] += 1
        for obj in scene.objects:
            cats[obj.category_id] += 1
            n_grasps += len(obj.grasps)
    n = len(dataset)
    return {
        "n_scenes": n,
        "n_objects": sum(cats.values()),
        "n_grasps": n_grasps,
        "grasps_per_image": n_grasps / n if n else 0.0,
        "objects_per_category": {str(c): cats.get(c, 0) for c in range(N_CATEGORIES)},
        "split_sizes": {s: splits.get(s, 0) for s in SPLITS},
    }
