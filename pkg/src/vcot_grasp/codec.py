"""Quantize grasps and boxes into 1024-bin token indices and back.

x and w are normalized by image width, y and h by image height, theta by 180.
Decoding returns the bin center, so a roundtrip moves each value by at most
half a bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import AxisBox, GraspRect

N_BINS = 1024


def _check_bin(b: int) -> int:
    b = int(b)
    if not 0 <= b < N_BINS:
        raise ValueError(f"bin {b} outside [0, {N_BINS - 1}]")
    return b


@dataclass(frozen=True)
class GraspTokens:
    bins: tuple[int, int, int, int, int]

    def __post_init__(self):
        if len(self.bins) != 5:
            raise ValueError("grasp tokens need 5 bins")
        object.__setattr__(self, "bins", tuple(_check_bin(b) for b in self.bins))


@dataclass(frozen=True)
class BoxTokens:
    bins: tuple[int, int, int, int]

    def __post_init__(self):
        if len(self.bins) != 4:
            raise ValueError("box tokens need 4 bins")
        object.__setattr__(self, "bins", tuple(_check_bin(b) for b in self.bins))


def to_bin(value: float) -> int:
    """Bin of a normalized value; out-of-range values clamp to the end bins."""
    if not math.isfinite(value):
        raise ValueError(f"cannot encode non-finite value {value}")
    return min(max(math.floor(value * N_BINS), 0), N_BINS - 1)


def bin_center(b: int) -> float:
    return (b + 0.5) / N_BINS


def grasp_scales(img_w: float, img_h: float) -> tuple[float, float, float, float, float]:
    return (img_w, img_h, img_w, img_h, 180.0)


def encode_grasp(g: GraspRect, img_w: float, img_h: float) -> GraspTokens:
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dimensions must be positive")
    vals = g.as_list()
    return GraspTokens(tuple(to_bin(v / s) for v, s in zip(vals, grasp_scales(img_w, img_h))))


def min_extent(dim: float) -> float:
    """Smallest bin center of at least one pixel; re-encodes to its own bin."""
    b = min(max(math.ceil(N_BINS / dim - 0.5), 0), N_BINS - 1)
    return bin_center(b) * dim


def decode_grasp(t: GraspTokens, img_w: float, img_h: float) -> GraspRect:
    """Bin-center decode; w and h are floored at :func:`min_extent` (just over 1 px)."""
    x, y, w, h, theta = (bin_center(b) * s for b, s in zip(t.bins, grasp_scales(img_w, img_h)))
    return GraspRect(x, y, max(w, min_extent(img_w)), max(h, min_extent(img_h)), theta)


def encode_box(b: AxisBox, img_w: float, img_h: float) -> BoxTokens:
    if img_w <= 0 or img_h <= 0:
        raise ValueError("image dimensions must be positive")
    return BoxTokens(
        (
            to_bin(b.x_min / img_w),
            to_bin(b.y_min / img_h),
            to_bin(b.x_max / img_w),
            to_bin(b.y_max / img_h),
        )
    )


def decode_box(t: BoxTokens, img_w: float, img_h: float) -> AxisBox:
    """Bin-center decode. Inverted bins are reordered; equal bins widen by one bin."""
    x0, y0, x1, y1 = t.bins
    x0, x1 = sorted((x0, x1))
    y0, y1 = sorted((y0, y1))
    xa, xb = bin_center(x0) * img_w, bin_center(x1) * img_w
    ya, yb = bin_center(y0) * img_h, bin_center(y1) * img_h
    if x0 == x1:
        xa, xb = xa - 0.5 * img_w / N_BINS, xa + 0.5 * img_w / N_BINS
    if y0 == y1:
        ya, yb = ya - 0.5 * img_h / N_BINS, ya + 0.5 * img_h / N_BINS
    return AxisBox(xa, ya, xb, yb)
