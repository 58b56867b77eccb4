"""Instance pre-processing: threshold, sort, paste masks onto the canvas, NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from jppf.errors import BoxOutOfCanvas, LogitRangeError

Box = tuple[float, float, float, float]


@dataclass(frozen=True, eq=False)
class InstancePrediction:
    """One detection: mask logits over its box, the box (x0, y0, x1, y1), class, score."""

    mask: np.ndarray
    box: Box
    class_id: int
    confidence: float

    def __post_init__(self) -> None:
        mask = np.asarray(self.mask, dtype=np.float32)
        if mask.ndim != 2 or mask.size == 0:
            raise LogitRangeError(f"mask must be a non-empty 2-D map, got shape {mask.shape}")
        if mask.min() < 0.0 or mask.max() > 1.0 or not np.all(np.isfinite(mask)):
            raise LogitRangeError("mask logits must lie in [0, 1]")
        if not 0.0 <= self.confidence <= 1.0:
            raise LogitRangeError(f"confidence {self.confidence} outside [0, 1]")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))


@dataclass(frozen=True, eq=False)
class CanvasInstance:
    """An instance whose mask has been pasted onto an H x W canvas.

    Only the box window is stored (``crop``); ``mask`` materialises the full
    canvas with zeros outside the window.
    """

    crop: np.ndarray
    window: tuple[int, int, int, int]  # y0, y1, x0, x1 in pixels
    canvas_shape: tuple[int, int]
    box: Box
    class_id: int
    confidence: float
    instance_id: int = 0

    @property
    def mask(self) -> np.ndarray:
        out = np.zeros(self.canvas_shape, np.float32)
        y0, y1, x0, x1 = self.window
        out[y0:y1, x0:x1] = self.crop
        return out

    @property
    def slices(self) -> tuple[slice, slice]:
        y0, y1, x0, x1 = self.window
        return slice(y0, y1), slice(x0, x1)


def filter_and_sort(preds: Sequence[InstancePrediction], conf_threshold: float = 0.5) -> list[InstancePrediction]:
    """Keep predictions with confidence >= threshold, most confident first (stable)."""
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError(f"conf_threshold {conf_threshold} outside [0, 1]")
    kept = [p for p in preds if p.confidence >= conf_threshold]
    return sorted(kept, key=lambda p: -p.confidence)


def box_window(box: Box, height: int, width: int) -> tuple[int, int, int, int]:
    """Pixel window covered by a box, validated against the canvas."""
    x0, y0, x1, y1 = box
    if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
        raise BoxOutOfCanvas(f"box {box} does not fit a {height}x{width} canvas")
    return math.floor(y0), math.ceil(y1), math.floor(x0), math.ceil(x1)


def _linear_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to the edge
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize with half-pixel-centre alignment."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi, f = _linear_weights(img.shape[0], out_h)
    rows = img[lo] * (1.0 - f)[:, None] + img[hi] * f[:, None]
    lo, hi, f = _linear_weights(img.shape[1], out_w)
    out = rows[:, lo] * (1.0 - f) + rows[:, hi] * f
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def paste_mask(pred: InstancePrediction, height: int, width: int) -> CanvasInstance:
    y0, y1, x0, x1 = box_window(pred.box, height, width)
    crop = resize_bilinear(pred.mask, y1 - y0, x1 - x0)
    return CanvasInstance(
        crop=crop,
        window=(y0, y1, x0, x1),
        canvas_shape=(height, width),
        box=pred.box,
        class_id=pred.class_id,
        confidence=pred.confidence,
    )


def box_iou(a: Box, b: Box) -> float:
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def overlap_nms(
    instances: Sequence[CanvasInstance], iou_threshold: float = 0.5, per_class: bool = False
) -> list[CanvasInstance]:
    """Greedy box NMS over a confidence-sorted list.

    An instance is dropped iff its box IoU with an already kept instance is
    strictly greater than ``iou_threshold``. Survivors keep their order and are
    numbered 1..N.
    """
    kept: list[CanvasInstance] = []
    for inst in instances:
        if any(
            box_iou(inst.box, k.box) > iou_threshold
            for k in kept
            if not per_class or k.class_id == inst.class_id
        ):
            continue
        kept.append(inst)
    return [replace(inst, instance_id=i) for i, inst in enumerate(kept, start=1)]


def preprocess_instances(
    preds: Sequence[InstancePrediction],
    height: int,
    width: int,
    conf_threshold: float = 0.5,
    iou_threshold: float = 0.5,
    per_class_nms: bool = False,
) -> list[CanvasInstance]:
    ordered = filter_and_sort(preds, conf_threshold)
    pasted = [paste_mask(p, height, width) for p in ordered]
    return overlap_nms(pasted, iou_threshold, per_class=per_class_nms)
