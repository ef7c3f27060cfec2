"""Two-turn localize-then-zoom inference: square crops, resampling, frame maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .codec import N_BINS, BoxTokens, GraspTokens, decode_box, decode_grasp
from .geometry import AxisBox, GraspRect

MODES = ("vcot", "single_turn")
MIN_CROP_SIDE = 8.0


@dataclass(frozen=True)
class CropSpec:
    x0: float
    y0: float
    side: float
    out_side: int

    def __post_init__(self):
        if self.side <= 0 or self.out_side <= 0:
            raise ValueError(f"invalid crop spec {self}")

    @property
    def scale(self) -> float:
        return self.out_side / self.side

    def fits(self, img_w: float, img_h: float, tol: float = 1e-9) -> bool:
        return (
            self.x0 >= -tol
            and self.y0 >= -tol
            and self.x0 + self.side <= img_w + tol
            and self.y0 + self.side <= img_h + tol
        )


def square_expand(b: AxisBox, img_w: int, img_h: int, margin: float = 0.1, out_side: int = 64) -> CropSpec:
    """Square crop around ``b`` padded by ``margin``, shifted to lie inside the image."""
    if b.x_max <= 0 or b.y_max <= 0 or b.x_min >= img_w or b.y_min >= img_h:
        raise ValueError(f"box {b.as_list()} does not intersect the {img_w}x{img_h} image")
    limit = float(min(img_w, img_h))
    side = max(b.width, b.height) * (1.0 + margin)
    side = min(max(side, MIN_CROP_SIDE), limit)
    cx, cy = b.center
    x0 = min(max(cx - 0.5 * side, 0.0), img_w - side)
    y0 = min(max(cy - 0.5 * side, 0.0), img_h - side)
    return CropSpec(x0, y0, side, out_side)


def crop_resize(image: np.ndarray, spec: CropSpec) -> np.ndarray:
    """Bilinear resample of the square ``spec`` region to ``out_side`` pixels.

    Pixel ``k`` covers [k, k+1) so its center is at k + 0.5. Samples beyond
    the outermost pixel centers clamp to the edge. uint8 input gives rounded
    uint8 output; other dtypes come back as float64.
    """
    h, w = image.shape[:2]
    if not spec.fits(w, h, tol=1e-6):
        raise ValueError(f"crop {spec} exceeds the {w}x{h} image")
    n = spec.out_side
    step = spec.side / n
    u = spec.x0 + (np.arange(n) + 0.5) * step - 0.5
    v = spec.y0 + (np.arange(n) + 0.5) * step - 0.5
    u = np.clip(u, 0.0, w - 1.0)
    v = np.clip(v, 0.0, h - 1.0)
    j0 = np.minimum(np.floor(u).astype(int), w - 1)
    i0 = np.minimum(np.floor(v).astype(int), h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    i1 = np.minimum(i0 + 1, h - 1)
    fu = (u - j0)[None, :]
    fv = (v - i0)[:, None]
    if image.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    src = image.astype(np.float64)
    top = src[i0][:, j0] * (1 - fu) + src[i0][:, j1] * fu
    bot = src[i1][:, j0] * (1 - fu) + src[i1][:, j1] * fu
    out = top * (1 - fv) + bot * fv
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def to_crop_frame(g: GraspRect, spec: CropSpec) -> GraspRect:
    s = spec.scale
    return GraspRect((g.x - spec.x0) * s, (g.y - spec.y0) * s, g.w * s, g.h * s, g.theta)


def from_crop_frame(g: GraspRect, spec: CropSpec) -> GraspRect:
    s = spec.side / spec.out_side
    return GraspRect(g.x * s + spec.x0, g.y * s + spec.y0, g.w * s, g.h * s, g.theta)


class PipelineModel(Protocol):
    """What :func:`run_pipeline` needs from a model."""

    head_kind: str
    image_side: int

    def box_logits(self, image: np.ndarray, condition: int) -> np.ndarray: ...

    def grasp_output(self, image: np.ndarray, crop: Optional[np.ndarray], condition: int) -> np.ndarray: ...


def decode_grasp_output(out: np.ndarray, head_kind: str, side: int) -> GraspRect:
    """Turn a stage-2 output (token logits or pixel-space values) into a grasp."""
    out = np.asarray(out)
    if head_kind == "token":
        if out.shape != (5, N_BINS):
            raise ValueError(f"token head must emit (5, {N_BINS}) logits, got {out.shape}")
        return decode_grasp(GraspTokens(tuple(int(i) for i in out.argmax(axis=1))), side, side)
    if head_kind == "regression":
        if out.shape != (5,):
            raise ValueError(f"regression head must emit 5 values, got {out.shape}")
        x, y, w, h, theta = (float(v) for v in out)
        return GraspRect(x, y, max(w, 1e-6), max(h, 1e-6), theta)
    raise ValueError(f"unknown head kind {head_kind!r}")


def run_pipeline(
    model: PipelineModel,
    image: np.ndarray,
    instruction: tuple[int, int],
    mode: str = "vcot",
    margin: float = 0.1,
) -> tuple[GraspRect, Optional[AxisBox]]:
    """Predict a grasp for the instructed object.

    ``vcot`` localizes the object, zooms on it and predicts the grasp from
    both views; ``single_turn`` predicts from the full image alone and
    returns no box.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    side = model.image_side
    if image.shape[:2] != (side, side):
        raise ValueError(f"image must be {side}x{side}, got {image.shape[:2]}")
    detect_id, grasp_id = instruction

    if mode == "single_turn":
        out = model.grasp_output(image, None, grasp_id)
        return decode_grasp_output(out, model.head_kind, side), None

    logits = np.asarray(model.box_logits(image, detect_id))
    if logits.shape != (4, N_BINS):
        raise ValueError(f"box head must emit (4, {N_BINS}) logits, got {logits.shape}")
    box = decode_box(BoxTokens(tuple(int(i) for i in logits.argmax(axis=1))), side, side)
    spec = square_expand(box, side, side, margin=margin, out_side=side)
    crop = crop_resize(image, spec)
    out = model.grasp_output(image, crop, grasp_id)
    g = decode_grasp_output(out, model.head_kind, side)
    return from_crop_frame(g, spec), box
