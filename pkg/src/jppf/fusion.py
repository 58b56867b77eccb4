"""Joint panoptic-part fusion.

Every candidate label ``(s, id, p)`` gets a fused score map computed from a
stack of masked logits with::

    FL(layers) = (sum of sigmoid(layer)) * (sum of layer)

Things stack the semantic channel of their class, their own mask and one part
channel (one stack per part of a partitionable class, the part background
channel otherwise), all cropped to the instance box. Stuff classes stack their
semantic channel with the part background channel over the full canvas. The
per-pixel argmax over all candidates decides between things and stuff; stuff
identities are then read from the raw semantic logits, and small stuff regions
are voided.

Thing candidates are kept as crops over their box window. Outside the window
all three layers are zero, so the fused score is exactly 0 there and can never
beat a stuff candidate (those come first and are >= 0), which is what lets
:func:`resolve` touch only the window.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from jppf.errors import LogitRangeError, MissingBackgroundChannel, NotAThingClass, ShapeMismatch
from jppf.instances import CanvasInstance, InstancePrediction, preprocess_instances
from jppf.taxonomy import (
    ClassTaxonomy,
    PanopticMap,
    PanopticPartLabel,
    PanopticPartMap,
    VOID_VALUE,
    encode_label,
    ungroup_part,
)

log = logging.getLogger(__name__)

Window = tuple[int, int, int, int]  # y0, y1, x0, x1

SEMANTIC, INSTANCE, PART = "semantic", "instance", "part"


@dataclass(frozen=True, eq=False)
class DenseLogits:
    """C x H x W activations in [0, 1]; ``channel_meta[k]`` names channel k."""

    values: np.ndarray
    channel_meta: tuple[int, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 3 or values.shape[0] < 1:
            raise ShapeMismatch(f"dense logits must be C x H x W with C >= 1, got {values.shape}")
        if len(self.channel_meta) != values.shape[0]:
            raise ShapeMismatch(
                f"{len(self.channel_meta)} channel labels for {values.shape[0]} channels"
            )
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise LogitRangeError("dense logits must lie in [0, 1]")
        object.__setattr__(self, "values", values.astype(np.float32, copy=False))
        object.__setattr__(self, "channel_meta", tuple(int(c) for c in self.channel_meta))

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    def has(self, key: int) -> bool:
        return key in self.channel_meta

    def channel(self, key: int) -> np.ndarray:
        return self.values[self.channel_meta.index(key)]


@dataclass(frozen=True)
class FusionConfig:
    min_stuff_area: int = 2048
    conf_threshold: float = 0.5
    iou_threshold: float = 0.5
    per_class_nms: bool = False
    threads: int = 1

    def __post_init__(self) -> None:
        if self.min_stuff_area < 0:
            raise ValueError("min_stuff_area must be >= 0")
        for name in ("conf_threshold", "iou_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FusionConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown fusion config keys: {sorted(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class MaskedLogitStack:
    """Equally shaped layers over ``window``; values outside the window are zero."""

    layers: tuple[np.ndarray, ...]
    sources: tuple[str, ...]
    window: Window

    @property
    def k(self) -> int:
        return len(self.layers)

    def dense(self, canvas_shape: tuple[int, int]) -> list[np.ndarray]:
        y0, y1, x0, x1 = self.window
        out = []
        for layer in self.layers:
            full = np.zeros(canvas_shape, np.float32)
            full[y0:y1, x0:x1] = layer
            out.append(full)
        return out


@dataclass(frozen=True, eq=False)
class Candidate:
    identity: PanopticPartLabel
    window: Window
    scores: np.ndarray


@dataclass(frozen=True, eq=False)
class CandidateStack:
    """The N_pp fused channels, stuff first, then things by instance id."""

    channels: tuple[Candidate, ...]
    canvas_shape: tuple[int, int]
    num_stuff: int
    n_th: int
    n_th_np: int
    n_th_p: int

    @property
    def n_pp(self) -> int:
        return len(self.channels)

    @property
    def identities(self) -> list[PanopticPartLabel]:
        return [c.identity for c in self.channels]

    def channel(self, i: int) -> np.ndarray:
        ch = self.channels[i]
        out = np.zeros(self.canvas_shape, np.float64)
        y0, y1, x0, x1 = ch.window
        out[y0:y1, x0:x1] = ch.scores
        return out

    def to_array(self) -> np.ndarray:
        h, w = self.canvas_shape
        if not self.channels:
            return np.zeros((0, h, w), np.float64)
        return np.stack([self.channel(i) for i in range(self.n_pp)])


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def fuse_logits(stack: MaskedLogitStack | Sequence[np.ndarray]) -> np.ndarray:
    """Consistency-rewarding fusion without normalisation: (sum sigmoid(l)) * (sum l), per pixel."""
    layers = stack.layers if isinstance(stack, MaskedLogitStack) else tuple(stack)
    if not layers:
        raise ShapeMismatch("fusion needs at least one layer")
    shape = np.shape(layers[0])
    sig = np.zeros(shape, np.float64)
    total = np.zeros(shape, np.float64)
    for layer in layers:
        if np.shape(layer) != shape:
            raise ShapeMismatch(f"layer shapes differ: {np.shape(layer)} vs {shape}")
        x = np.asarray(layer, dtype=np.float64)
        sig += sigmoid(x)
        total += x
    return sig * total


def _check_inputs(S: DenseLogits, P: DenseLogits | None, t: ClassTaxonomy) -> None:
    missing = [c for c in t.semantic_classes if not S.has(c)]
    if missing:
        raise ShapeMismatch(f"semantic logits lack channels for classes {missing}")
    if P is not None:
        if P.spatial_shape != S.spatial_shape:
            raise ShapeMismatch(f"part logits {P.spatial_shape} vs semantic {S.spatial_shape}")
        if not P.has(t.background_group):
            raise MissingBackgroundChannel(
                f"part logits lack the background group {t.background_group}"
            )


def build_thing_candidates(
    inst: CanvasInstance, S: DenseLogits, P: DenseLogits, t: ClassTaxonomy
) -> list[tuple[PanopticPartLabel, MaskedLogitStack]]:
    c = inst.class_id
    if not t.is_thing(c):
        raise NotAThingClass(f"class {c} is not a thing class")
    if not P.has(t.background_group):
        raise MissingBackgroundChannel(f"part logits lack the background group {t.background_group}")
    rows, cols = inst.slices
    mls = S.channel(c)[rows, cols]
    mli = inst.crop
    sources = (SEMANTIC, INSTANCE, PART)
    if not t.is_partitionable(c):
        mlp = P.channel(t.background_group)[rows, cols]
        return [(PanopticPartLabel(c, inst.instance_id, 0), MaskedLogitStack((mls, mli, mlp), sources, inst.window))]
    out = []
    for g in t.class_parts[c]:
        mlp = P.channel(g)[rows, cols]
        label = PanopticPartLabel(c, inst.instance_id, ungroup_part(t, c, g))
        # MLS and MLI are shared between part stacks, not copied
        out.append((label, MaskedLogitStack((mls, mli, mlp), sources, inst.window)))
    return out


def build_stuff_candidates(
    S: DenseLogits, P: DenseLogits, t: ClassTaxonomy
) -> list[tuple[PanopticPartLabel, MaskedLogitStack]]:
    if not P.has(t.background_group):
        raise MissingBackgroundChannel(f"part logits lack the background group {t.background_group}")
    h, w = S.spatial_shape
    window = (0, h, 0, w)
    out = []
    for s in t.stuff_classes:
        mls = S.channel(s)
        if t.is_partitionable(s):
            for g in t.class_parts[s]:
                stack = MaskedLogitStack((mls, P.channel(g)), (SEMANTIC, PART), window)
                out.append((PanopticPartLabel(s, 0, ungroup_part(t, s, g)), stack))
        else:
            stack = MaskedLogitStack((mls, P.channel(t.background_group)), (SEMANTIC, PART), window)
            out.append((PanopticPartLabel(s, 0, 0), stack))
    return out


def fuse_candidates(built: Iterable[tuple[PanopticPartLabel, MaskedLogitStack]]) -> list[Candidate]:
    return [Candidate(label, stack.window, fuse_logits(stack)) for label, stack in built]


def assemble(
    things: Sequence[Candidate], stuff: Sequence[Candidate], canvas_shape: tuple[int, int]
) -> CandidateStack:
    h, w = canvas_shape
    for cand in stuff:
        if cand.window != (0, h, 0, w) or cand.scores.shape != (h, w):
            raise ShapeMismatch(f"stuff candidate {cand.identity} does not cover the {h}x{w} canvas")
    for cand in things:
        y0, y1, x0, x1 = cand.window
        if not (0 <= y0 < y1 <= h and 0 <= x0 < x1 <= w) or cand.scores.shape != (y1 - y0, x1 - x0):
            raise ShapeMismatch(f"thing candidate {cand.identity} does not fit the canvas")
    ordered = sorted(things, key=lambda c: c.identity.instance)
    ids = {c.identity.instance for c in ordered}
    part_ids = {c.identity.instance for c in ordered if c.identity.part != 0}
    return CandidateStack(
        channels=tuple(stuff) + tuple(ordered),
        canvas_shape=(h, w),
        num_stuff=len(stuff),
        n_th=len(ids),
        n_th_np=len(ids - part_ids),
        n_th_p=len(part_ids),
    )


def expected_candidate_count(t: ClassTaxonomy, instance_classes: Iterable[int]) -> int:
    """Closed form N_pp = C_st + N_np + sum of C_{p,c} over partitionable instances."""
    n = sum(t.num_parts(s) if t.is_partitionable(s) else 1 for s in t.stuff_classes)
    for c in instance_classes:
        n += t.num_parts(c) if t.is_partitionable(c) else 1
    return n


def _argmax_channels(stack: CandidateStack) -> np.ndarray:
    """Index of the best channel per pixel (-1 if there are none); ties go low."""
    h, w = stack.canvas_shape
    best = np.full((h, w), -np.inf)
    winner = np.full((h, w), -1, np.int32)
    covered = False
    for i, cand in enumerate(stack.channels):
        y0, y1, x0, x1 = cand.window
        full = (y0, y1, x0, x1) == (0, h, 0, w)
        if not covered and not full:
            scores = stack.channel(i)
            y0, y1, x0, x1 = 0, h, 0, w
        else:
            scores = cand.scores
        region = best[y0:y1, x0:x1]
        better = scores > region
        region[better] = scores[better]
        winner[y0:y1, x0:x1][better] = i
        covered = True
    return winner


def remove_small_stuff(labels: np.ndarray, t: ClassTaxonomy, min_area: int) -> np.ndarray:
    """Void every 4-connected stuff region (same class, no instance) below ``min_area``."""
    if min_area <= 0:
        return labels
    out = labels.copy()
    semantic = labels >> 24
    is_stuff_pixel = (labels != VOID_VALUE) & (((labels >> 8) & 0xFFFF) == 0)
    for s in t.stuff_classes:
        region = is_stuff_pixel & (semantic == s)
        if not region.any():
            continue
        comp, n = ndimage.label(region)
        sizes = np.bincount(comp.ravel(), minlength=n + 1)
        small = sizes < min_area
        small[0] = False
        out[small[comp]] = VOID_VALUE
    return out


def resolve(
    stack: CandidateStack, S: DenseLogits, cfg: FusionConfig, t: ClassTaxonomy
) -> PanopticPartMap:
    h, w = stack.canvas_shape
    if S.spatial_shape != (h, w):
        raise ShapeMismatch(f"semantic logits {S.spatial_shape} vs candidates {(h, w)}")
    winner = _argmax_channels(stack)
    codes = np.array(
        [VOID_VALUE] + [encode_label(c.identity) for c in stack.channels], dtype=np.uint32
    )
    labels = codes[winner + 1]

    is_thing = np.zeros(stack.n_pp + 1, bool)
    is_thing[stack.num_stuff + 1:] = True
    fallback = ~is_thing[winner + 1] & (winner >= 0)
    if t.stuff_classes and fallback.any():
        stuff_idx = [S.channel_meta.index(s) for s in t.stuff_classes]
        best_stuff = np.argmax(S.values[stuff_idx], axis=0)
        stuff_codes = np.array([encode_label(PanopticPartLabel(s)) for s in t.stuff_classes], np.uint32)
        labels = np.where(fallback, stuff_codes[best_stuff], labels)
    elif fallback.any():
        labels = np.where(fallback, np.uint32(VOID_VALUE), labels)
    return PanopticPartMap(remove_small_stuff(labels, t, cfg.min_stuff_area))


def _map_ordered(fn, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def build_candidate_stack(
    S: DenseLogits,
    P: DenseLogits,
    instances: Sequence[CanvasInstance],
    t: ClassTaxonomy,
    threads: int = 1,
) -> CandidateStack:
    """Fused candidates for already pre-processed instances."""
    _check_inputs(S, P, t)
    stuff = fuse_candidates(build_stuff_candidates(S, P, t))
    per_instance = _map_ordered(
        lambda inst: fuse_candidates(build_thing_candidates(inst, S, P, t)), list(instances), threads
    )
    things = [c for group in per_instance for c in group]
    stack = assemble(things, stuff, S.spatial_shape)
    expected = expected_candidate_count(t, [inst.class_id for inst in instances])
    if stack.n_pp != expected:
        raise AssertionError(f"N_pp {stack.n_pp} != closed form {expected}")
    return stack


def jppf_pipeline(
    S: DenseLogits,
    P: DenseLogits,
    preds: Sequence[InstancePrediction],
    cfg: FusionConfig,
    t: ClassTaxonomy,
    return_stack: bool = False,
):
    """Raw predictions in, panoptic-part map out (optionally with the candidate stack)."""
    _check_inputs(S, P, t)
    h, w = S.spatial_shape
    instances = preprocess_instances(
        preds, h, w, cfg.conf_threshold, cfg.iou_threshold, cfg.per_class_nms
    )
    stack = build_candidate_stack(S, P, instances, t, cfg.threads)
    log.debug("fusing %d instances into %d candidates", stack.n_th, stack.n_pp)
    result = resolve(stack, S, cfg, t)
    return (result, stack) if return_stack else result


def panoptic_fuse(
    S: DenseLogits,
    preds: Sequence[InstancePrediction],
    cfg: FusionConfig,
    t: ClassTaxonomy,
) -> PanopticMap:
    """Panoptic-only fusion: things fuse {MLS, MLI}; stuff passes raw semantic logits."""
    _check_inputs(S, None, t)
    h, w = S.spatial_shape
    instances = preprocess_instances(
        preds, h, w, cfg.conf_threshold, cfg.iou_threshold, cfg.per_class_nms
    )
    full = (0, h, 0, w)
    stuff = [
        Candidate(PanopticPartLabel(s), full, S.channel(s).astype(np.float64)) for s in t.stuff_classes
    ]

    def things_of(inst: CanvasInstance) -> list[Candidate]:
        if not t.is_thing(inst.class_id):
            raise NotAThingClass(f"class {inst.class_id} is not a thing class")
        rows, cols = inst.slices
        layers = (S.channel(inst.class_id)[rows, cols], inst.crop)
        return [Candidate(PanopticPartLabel(inst.class_id, inst.instance_id), inst.window, fuse_logits(layers))]

    things = [c for group in _map_ordered(things_of, instances, cfg.threads) for c in group]
    stack = assemble(things, stuff, (h, w))
    return PanopticMap(resolve(stack, S, cfg, t).labels)
