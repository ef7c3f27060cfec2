"""Procedural tabletop scenes with analytic boxes and antipodal grasp labels.

A category is a (color, shape) pair. Unseen categories are held-out pairings
of colors and shapes that both occur in training, so every test object is
built from familiar parts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import AxisBox, GraspRect, axis_iou

SHAPES = ("bar", "disc", "tee", "ell")
COLORS = (
    (220, 40, 40),
    (40, 170, 60),
    (40, 70, 220),
    (235, 205, 35),
    (200, 50, 200),
    (40, 200, 210),
)
# (base color, pattern, pattern amplitude)
BACKGROUNDS = (
    ((200, 200, 200), "flat", 0),
    ((215, 198, 168), "stripes", 10),
    ((70, 75, 85), "flat", 0),
    ((150, 170, 192), "checker", 14),
    ((135, 98, 60), "stripes", 16),
)
SPLITS = ("train", "test_seen", "test_unseen")
N_CATEGORIES = len(COLORS) * len(SHAPES)

# at image_side 64; everything scales with image_side / 64
GRASP_CLEARANCE = 4.0
FINGER_WIDTH = 6.0
MAX_PLACEMENT_ATTEMPTS = 200
MAX_BOX_IOU = 0.05


def category_of(color_id: int, shape_id: int) -> int:
    return color_id * len(SHAPES) + shape_id


def split_category(category_id: int) -> tuple[int, int]:
    if not 0 <= category_id < N_CATEGORIES:
        raise ValueError(f"unknown category {category_id}")
    return divmod(category_id, len(SHAPES))


def default_unseen() -> tuple[int, ...]:
    # one held-out shape per color, cycling through the shapes
    return tuple(category_of(c, c % len(SHAPES)) for c in range(len(COLORS)))


def default_seen() -> tuple[int, ...]:
    unseen = set(default_unseen())
    return tuple(c for c in range(N_CATEGORIES) if c not in unseen)


@dataclass(frozen=True)
class ObjectSpec:
    category_id: int
    color_id: int
    shape_kind: str
    center: tuple[float, float]
    orientation: float
    scale: float
    dims: tuple[float, ...]
    bbox: AxisBox
    grasps: tuple[GraspRect, ...]
    distractor: bool = False

    @property
    def target_grasp(self) -> GraspRect:
        """Canonical training label: the first listed grasp."""
        return self.grasps[0]

    def parts(self) -> list:
        return _parts(self.shape_kind, self.center, self.orientation, self.dims)


@dataclass
class Scene:
    image: np.ndarray
    objects: list[ObjectSpec]
    background_id: int
    split: str
    index: int = 0

    def targets(self) -> list[ObjectSpec]:
        return [o for o in self.objects if not o.distractor]


@dataclass
class DatasetConfig:
    n_scenes: int = 2000
    n_test_seen: int = 200
    n_test_unseen: int = 200
    objects_per_scene: tuple[int, int] = (1, 3)
    image_side: int = 64
    seed: int = 0
    seen_categories: tuple[int, ...] = field(default_factory=default_seen)
    unseen_categories: tuple[int, ...] = field(default_factory=default_unseen)
    distractors: bool = False
    distractors_per_scene: tuple[int, int] = (1, 2)
    background_set: tuple[int, ...] = (0, 1, 2)
    splits: tuple[str, ...] = SPLITS

    def validate(self):
        if set(self.seen_categories) & set(self.unseen_categories):
            raise ValueError("seen and unseen categories overlap")
        for c in tuple(self.seen_categories) + tuple(self.unseen_categories):
            split_category(c)
        lo, hi = self.objects_per_scene
        if not 1 <= lo <= hi:
            raise ValueError(f"bad objects_per_scene {self.objects_per_scene}")
        if min(self.n_scenes, self.n_test_seen, self.n_test_unseen) < 0:
            raise ValueError("scene counts must be non-negative")
        if self.image_side < 32:
            raise ValueError("image_side must be at least 32")
        if not self.background_set or any(not 0 <= b < len(BACKGROUNDS) for b in self.background_set):
            raise ValueError(f"bad background_set {self.background_set}")
        for s in self.splits:
            if s not in SPLITS:
                raise ValueError(f"unknown split {s!r}")
        need_seen = ("train" in self.splits and self.n_scenes) or ("test_seen" in self.splits and self.n_test_seen)
        if need_seen and not self.seen_categories:
            raise ValueError("no seen categories")
        if "test_unseen" in self.splits and self.n_test_unseen and not self.unseen_categories:
            raise ValueError("no unseen categories")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        for k in ("objects_per_scene", "distractors_per_scene", "seen_categories",
                  "unseen_categories", "background_set", "splits"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# --- shape geometry -------------------------------------------------------


def _rect_poly(cx, cy, length, width, phi_deg):
    t = math.radians(phi_deg)
    ux, uy = math.cos(t), math.sin(t)
    vx, vy = -uy, ux
    a, b = 0.5 * length, 0.5 * width
    return [
        (cx + a * ux + b * vx, cy + a * uy + b * vy),
        (cx - a * ux + b * vx, cy - a * uy + b * vy),
        (cx - a * ux - b * vx, cy - a * uy - b * vy),
        (cx + a * ux - b * vx, cy + a * uy - b * vy),
    ]


def _strokes(kind, center, phi, dims):
    """Strokes of a composite shape as (center, length, width, direction) tuples."""
    cx, cy = center
    t = math.radians(phi)
    u = (math.cos(t), math.sin(t))
    n = (-u[1], u[0])
    if kind == "bar":
        length, width = dims
        return [((cx, cy), length, width, phi)]
    if kind == "tee":
        bar_len, stem_len, width = dims
        stem_c = (cx + n[0] * stem_len / 2, cy + n[1] * stem_len / 2)
        return [((cx, cy), bar_len, width, phi), (stem_c, stem_len, width, phi + 90.0)]
    if kind == "ell":
        a, b, width = dims
        # each arm runs from half a width behind the corner to its tip
        c1 = (cx + u[0] * (a - width / 2) / 2, cy + u[1] * (a - width / 2) / 2)
        c2 = (cx + n[0] * (b - width / 2) / 2, cy + n[1] * (b - width / 2) / 2)
        return [(c1, a + width / 2, width, phi), (c2, b + width / 2, width, phi + 90.0)]
    raise ValueError(f"not a stroke shape: {kind}")


def _parts(kind, center, phi, dims):
    if kind == "disc":
        return [("disc", center, dims[0])]
    return [("poly", _rect_poly(c[0], c[1], L, W, d)) for c, L, W, d in _strokes(kind, center, phi, dims)]


def _bbox_of(parts) -> AxisBox:
    xs, ys = [], []
    for p in parts:
        if p[0] == "disc":
            (cx, cy), r = p[1], p[2]
            xs += [cx - r, cx + r]
            ys += [cy - r, cy + r]
        else:
            xs += [q[0] for q in p[1]]
            ys += [q[1] for q in p[1]]
    return AxisBox(min(xs), min(ys), max(xs), max(ys))


def _grasps(kind, center, phi, dims, k) -> tuple[GraspRect, ...]:
    clearance, finger = GRASP_CLEARANCE * k, FINGER_WIDTH * k
    cx, cy = center
    if kind == "disc":
        w = 2 * dims[0] + clearance
        return tuple(GraspRect(cx, cy, w, finger, a) for a in (0.0, 45.0, 90.0, 135.0))
    if kind == "bar":
        length, width = dims
        t = math.radians(phi)
        ux, uy = math.cos(t), math.sin(t)
        th = phi + 90.0
        w = width + clearance
        return tuple(
            GraspRect(cx + s * ux * length / 4, cy + s * uy * length / 4, w, finger, th) for s in (0.0, 1.0, -1.0)
        )
    out = []
    strokes = _strokes(kind, center, phi, dims)
    for i, ((sx, sy), length, width, d) in enumerate(strokes):
        if kind == "tee" and i == 0:
            # the stem meets the crossbar at its middle; grasp the crossbar off-center
            t = math.radians(d)
            sx, sy = sx + math.cos(t) * length / 4, sy + math.sin(t) * length / 4
        out.append(GraspRect(sx, sy, width + clearance, finger, d + 90.0))
    return tuple(out)


def _sample_dims(rng, kind, k) -> tuple[float, ...]:
    if kind == "bar":
        return (rng.uniform(14, 24) * k, rng.uniform(4, 7) * k)
    if kind == "disc":
        return (rng.uniform(5, 9) * k,)
    if kind == "tee":
        return (rng.uniform(14, 20) * k, rng.uniform(10, 16) * k, rng.uniform(4, 6) * k)
    return (rng.uniform(12, 18) * k, rng.uniform(12, 18) * k, rng.uniform(4, 6) * k)


def make_object(rng: np.random.Generator, category_id: int, image_side: int) -> ObjectSpec:
    """Random pose and size for one object of ``category_id``, fully inside the image."""
    color_id, shape_id = split_category(category_id)
    kind = SHAPES[shape_id]
    k = image_side / 64.0
    dims = _sample_dims(rng, kind, k)
    phi = float(rng.uniform(0.0, 180.0))
    local = _bbox_of(_parts(kind, (0.0, 0.0), phi, dims))
    lo_x, hi_x = 1.0 - local.x_min, image_side - 1.0 - local.x_max
    lo_y, hi_y = 1.0 - local.y_min, image_side - 1.0 - local.y_max
    center = (float(rng.uniform(lo_x, hi_x)), float(rng.uniform(lo_y, hi_y)))
    parts = _parts(kind, center, phi, dims)
    return ObjectSpec(
        category_id=category_id,
        color_id=color_id,
        shape_kind=kind,
        center=center,
        orientation=phi,
        scale=max(dims) if kind != "disc" else 2 * dims[0],
        dims=dims,
        bbox=_bbox_of(parts),
        grasps=_grasps(kind, center, phi, dims, k),
    )


# --- rendering ------------------------------------------------------------


def background(background_id: int, side: int) -> np.ndarray:
    base, pattern, amp = BACKGROUNDS[background_id]
    img = np.empty((side, side, 3), dtype=np.int16)
    img[:] = base
    rows = np.arange(side)[:, None]
    cols = np.arange(side)[None, :]
    if pattern == "stripes":
        img += (((rows // 4) % 2) * amp)[..., None].astype(np.int16)
    elif pattern == "checker":
        img += ((((rows // 8) + (cols // 8)) % 2) * amp)[..., None].astype(np.int16)
    return np.clip(img, 0, 255).astype(np.uint8)


def shape_mask(obj: ObjectSpec, side: int) -> np.ndarray:
    """Pixels whose centers fall inside ``obj``."""
    px = np.arange(side)[None, :] + 0.5
    py = np.arange(side)[:, None] + 0.5
    mask = np.zeros((side, side), dtype=bool)
    for p in obj.parts():
        if p[0] == "disc":
            (cx, cy), r = p[1], p[2]
            mask |= (px - cx) ** 2 + (py - cy) ** 2 <= r * r
        else:
            poly = p[1]
            inside = np.ones((side, side), dtype=bool)
            for i in range(4):
                ax, ay = poly[i]
                bx, by = poly[(i + 1) % 4]
                inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
            mask |= inside
    return mask


def render(objects: Sequence[ObjectSpec], background_id: int, side: int) -> np.ndarray:
    """Flat-shaded objects painted in list order over the background."""
    img = background(background_id, side)
    for obj in objects:
        img[shape_mask(obj, side)] = COLORS[obj.color_id]
    return img


def render_scene(scene: Scene) -> np.ndarray:
    return render(scene.objects, scene.background_id, scene.image.shape[0])


# --- dataset --------------------------------------------------------------


def instruction_of(obj: ObjectSpec) -> tuple[int, int]:
    """(detect, grasp) condition ids; both share the category, the low bit is the task."""
    return 2 * obj.category_id, 2 * obj.category_id + 1


def _scene_rng(seed: int, split: str, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, SPLITS.index(split), index, stream])


def _compatible(obj: ObjectSpec, placed: Iterable[ObjectSpec]) -> bool:
    for o in placed:
        if axis_iou(obj.bbox, o.bbox) > MAX_BOX_IOU:
            return False
        if o.bbox.contains(*obj.center) or obj.bbox.contains(*o.center):
            return False
    return True


def _place(rng, categories, side, placed) -> list[ObjectSpec]:
    out = []
    for cat in categories:
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            obj = make_object(rng, int(cat), side)
            if _compatible(obj, list(placed) + out):
                out.append(obj)
                break
    return out


def make_scene(cfg: DatasetConfig, split: str, index: int) -> Scene:
    """Scene ``index`` of ``split``; its content depends only on (seed, split, index)."""
    side = cfg.image_side
    pool = cfg.unseen_categories if split == "test_unseen" else cfg.seen_categories
    pool = np.array(sorted(pool))

    obj_rng = _scene_rng(cfg.seed, split, index, 0)
    lo, hi = cfg.objects_per_scene
    n = min(int(obj_rng.integers(lo, hi + 1)), len(pool))
    cats = obj_rng.choice(pool, size=n, replace=False)
    targets = _place(obj_rng, cats, side, [])

    bg_rng = _scene_rng(cfg.seed, split, index, 1)
    bg = int(bg_rng.choice(np.array(sorted(cfg.background_set))))

    objects = list(targets)
    if cfg.distractors:
        d_rng = _scene_rng(cfg.seed, split, index, 2)
        others = set(cfg.seen_categories) | (set(cfg.unseen_categories) if split == "test_unseen" else set())
        others = np.array(sorted(others - {o.category_id for o in targets}))
        dlo, dhi = cfg.distractors_per_scene
        want = int(d_rng.integers(dlo, dhi + 1))
        extra: list[ObjectSpec] = []
        for _ in range(10):
            avail = np.array([c for c in others if c not in {o.category_id for o in extra}])
            if len(extra) >= want or not len(avail):
                break
            cats = d_rng.choice(avail, size=min(want - len(extra), len(avail)), replace=False)
            extra += _place(d_rng, cats, side, targets + extra)
        objects += [replace(o, distractor=True) for o in extra]
        # distractors go behind the targets
        objects = objects[len(targets):] + objects[: len(targets)]
    return Scene(render(objects, bg, side), objects, bg, split, index)


def gen_dataset(cfg: DatasetConfig) -> list[Scene]:
    cfg.validate()
    counts = {"train": cfg.n_scenes, "test_seen": cfg.n_test_seen, "test_unseen": cfg.n_test_unseen}
    return [make_scene(cfg, split, i) for split in cfg.splits for i in range(counts[split])]


def split_of(dataset: Sequence[Scene], split: str) -> list[Scene]:
    return [s for s in dataset if s.split == split]


# --- on-disk format -------------------------------------------------------


def write_ppm(path: Path, image: np.ndarray):
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_ppm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit P6 PPM")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    return np.frombuffer(data[pos:pos + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def object_record(o: ObjectSpec) -> dict:
    return {
        "category": o.category_id,
        "color": o.color_id,
        "shape": o.shape_kind,
        "bbox": o.bbox.as_list(),
        "grasps": [g.as_list() for g in o.grasps],
        "center": list(o.center),
        "orientation": o.orientation,
        "scale": o.scale,
        "dims": list(o.dims),
        "distractor": o.distractor,
    }


def object_from_record(r: dict) -> ObjectSpec:
    return ObjectSpec(
        category_id=int(r["category"]),
        color_id=int(r["color"]),
        shape_kind=r["shape"],
        center=tuple(r["center"]),
        orientation=float(r["orientation"]),
        scale=float(r["scale"]),
        dims=tuple(r["dims"]),
        bbox=AxisBox(*r["bbox"]),
        grasps=tuple(GraspRect(*g) for g in r["grasps"]),
        distractor=bool(r.get("distractor", False)),
    )


def scene_record(s: Scene, image_path: str) -> dict:
    return {
        "index": s.index,
        "image": image_path,
        "split": s.split,
        "background_id": s.background_id,
        "objects": [object_record(o) for o in s.objects],
    }


def write_dataset(scenes: Sequence[Scene], out_dir, extra: Optional[dict] = None) -> Path:
    """Write ``manifest.jsonl`` plus one PPM per scene under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in scenes:
        rel = f"images/{s.split}_{s.index:06d}.ppm"
        write_ppm(out / rel, s.image)
        lines.append(json.dumps(scene_record(s, rel), sort_keys=True))
    (out / "manifest.jsonl").write_text("".join(line + "\n" for line in lines))
    if extra is not None:
        (out / "dataset.json").write_text(json.dumps(extra, sort_keys=True, indent=2) + "\n")
    return out / "manifest.jsonl"


def load_dataset(path) -> list[Scene]:
    root = Path(path)
    manifest = root / "manifest.jsonl" if root.is_dir() else root
    root = manifest.parent
    scenes = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        r = json.loads(line)
        scenes.append(
            Scene(
                image=read_ppm(root / r["image"]),
                objects=[object_from_record(o) for o in r["objects"]],
                background_id=int(r["background_id"]),
                split=r["split"],
                index=int(r.get("index", len(scenes))),
            )
        )
    return scenes
