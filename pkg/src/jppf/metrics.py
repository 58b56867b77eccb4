"""Evaluation: mIoU, PQ, PartPQ and label density.

Segments are maximal groups of pixels sharing ``(semantic, instance)``; stuff
therefore forms one segment per class. A predicted and a ground-truth segment
of the same class match iff their IoU is strictly above 0.5, which makes the
matching unique. Ground-truth VOID pixels are left out of every IoU, and a
predicted segment lying mostly (> 50 %) on ground-truth VOID is dropped rather
than counted as a false positive.

PartPQ scores a matched pair of a partitionable class by the mean part-level
IoU over the part classes present on either side, computed on the union of the
pair's pixels; other classes use the plain segment IoU.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from jppf.errors import ShapeMismatch
from jppf.taxonomy import ClassTaxonomy, PanopticPartMap, VOID_VALUE

Segment = tuple[int, int]  # (semantic, instance)


@dataclass
class ClassMatches:
    tp: list[tuple[Segment, Segment, float]] = field(default_factory=list)
    fp: list[Segment] = field(default_factory=list)
    fn: list[Segment] = field(default_factory=list)


@dataclass
class SegmentMatchResult:
    per_class: dict[int, ClassMatches]

    def pairs(self) -> set[tuple[Segment, Segment]]:
        return {(p, g) for m in self.per_class.values() for p, g, _ in m.tp}


def _check_shapes(a, b) -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"shapes differ: {np.shape(a)} vs {np.shape(b)}")


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore_label: int | None = None):
    """Per-class IoU over classes 0..num_classes-1 and their mean.

    ``gt == ignore_label`` pixels are skipped entirely. Predicted values outside
    the class range count as "no class". Classes absent from both maps get NaN
    and are left out of the mean.
    """
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    _check_shapes(pred, gt)
    keep = np.ones(gt.shape, bool) if ignore_label is None else gt != ignore_label
    p = pred[keep]
    g = gt[keep]
    if np.any((g < 0) | (g >= num_classes)):
        raise ValueError("ground truth holds labels outside the class range")
    p = np.where((p < 0) | (p >= num_classes), num_classes, p)
    conf = np.bincount(g * (num_classes + 1) + p, minlength=num_classes * (num_classes + 1))
    conf = conf.reshape(num_classes, num_classes + 1)
    inter = np.diag(conf[:, :num_classes]).astype(np.float64)
    union = conf.sum(axis=1) + conf[:, :num_classes].sum(axis=0) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), np.nan)
    present = union > 0
    mean = float(iou[present].mean()) if present.any() else float("nan")
    return iou, mean


def semantic_miou(pred: PanopticPartMap, gt: PanopticPartMap, t: ClassTaxonomy):
    classes = t.semantic_classes
    lut = np.full(256, len(classes), np.int64)
    lut[list(classes)] = np.arange(len(classes))
    p = np.where(pred.void_mask, -1, lut[pred.semantic])
    g = np.where(gt.void_mask, -1, lut[gt.semantic])
    return miou(p, g, len(classes), ignore_label=-1)


def _group_index_map(m: PanopticPartMap, t: ClassTaxonomy) -> np.ndarray:
    """Grouped-part channel index per pixel; 0 is background, -1 VOID or unlabeled part."""
    table = np.zeros((256, 256), np.int64)
    for c, parts in t.class_parts.items():
        table[c, 0] = -1
        for k, g in enumerate(parts, start=1):
            table[c, k] = t.part_channel(g)
    out = table[m.semantic, m.part]
    out[m.void_mask] = -1
    return out


def part_miou(pred: PanopticPartMap, gt: PanopticPartMap, t: ClassTaxonomy):
    """mIoU over grouped part classes, background included."""
    return miou(_group_index_map(pred, t), _group_index_map(gt, t), len(t.part_groups), ignore_label=-1)


def _segments(m: PanopticPartMap) -> tuple[np.ndarray, np.ndarray]:
    """Segment keys (s << 16 | id) and a per-pixel segment index (-1 on VOID)."""
    keys = (m.labels >> 8).astype(np.int64)
    keys[m.void_mask] = -1
    uniq, inverse = np.unique(keys, return_inverse=True)
    inverse = inverse.reshape(keys.shape)
    if uniq.size and uniq[0] == -1:
        return uniq[1:], inverse - 1
    return uniq, inverse


def _key_to_segment(key: int) -> Segment:
    return int(key) >> 16, int(key) & 0xFFFF


def segment_ious(pred: PanopticPartMap, gt: PanopticPartMap):
    """Pairwise IoU table between predicted and ground-truth segments.

    Returns (pred_segments, gt_segments, iou matrix, fraction of each predicted
    segment lying on ground-truth VOID).
    """
    _check_shapes(pred.labels, gt.labels)
    pkeys, pidx = _segments(pred)
    gkeys, gidx = _segments(gt)
    np_, ng = len(pkeys), len(gkeys)
    pred_area = np.bincount(pidx[pidx >= 0], minlength=np_)
    gt_area = np.bincount(gidx[gidx >= 0], minlength=ng)
    on_void = np.bincount(pidx[(pidx >= 0) & (gidx < 0)], minlength=np_)
    both = (pidx >= 0) & (gidx >= 0)
    inter = np.bincount(pidx[both] * ng + gidx[both], minlength=np_ * ng).reshape(np_, ng)
    union = (pred_area - on_void)[:, None] + gt_area[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    void_frac = np.where(pred_area > 0, on_void / np.maximum(pred_area, 1), 0.0)
    return (
        [_key_to_segment(k) for k in pkeys],
        [_key_to_segment(k) for k in gkeys],
        iou,
        void_frac,
    )


def match_segments(pred: PanopticPartMap, gt: PanopticPartMap) -> SegmentMatchResult:
    psegs, gsegs, iou, void_frac = segment_ious(pred, gt)
    result: dict[int, ClassMatches] = {}
    matched_p, matched_g = set(), set()
    for i, j in zip(*np.nonzero(iou > 0.5)):
        if psegs[i][0] != gsegs[j][0]:
            continue
        result.setdefault(gsegs[j][0], ClassMatches()).tp.append((psegs[i], gsegs[j], float(iou[i, j])))
        matched_p.add(i)
        matched_g.add(j)
    for i, seg in enumerate(psegs):
        if i not in matched_p and void_frac[i] <= 0.5:
            result.setdefault(seg[0], ClassMatches()).fp.append(seg)
    for j, seg in enumerate(gsegs):
        if j not in matched_g:
            result.setdefault(seg[0], ClassMatches()).fn.append(seg)
    return SegmentMatchResult(result)


def brute_force_match(pred: PanopticPartMap, gt: PanopticPartMap) -> set[tuple[Segment, Segment]]:
    """Exhaustive optimal one-to-one matching, for small maps only.

    Counts pixels with plain loops, then tries every injective assignment of
    ground-truth to predicted segments per class and keeps the one with the
    most pairs above 0.5 IoU (total IoU breaks ties).
    """
    h, w = pred.shape
    p_area: dict[Segment, int] = {}
    g_area: dict[Segment, int] = {}
    p_void: dict[Segment, int] = {}
    inter: dict[tuple[Segment, Segment], int] = {}
    for y in range(h):
        for x in range(w):
            pv, gv = int(pred.labels[y, x]), int(gt.labels[y, x])
            ps = (pv >> 24, (pv >> 8) & 0xFFFF) if pv != VOID_VALUE else None
            gs = (gv >> 24, (gv >> 8) & 0xFFFF) if gv != VOID_VALUE else None
            if ps is not None:
                p_area[ps] = p_area.get(ps, 0) + 1
                if gs is None:
                    p_void[ps] = p_void.get(ps, 0) + 1
            if gs is not None:
                g_area[gs] = g_area.get(gs, 0) + 1
            if ps is not None and gs is not None:
                inter[(ps, gs)] = inter.get((ps, gs), 0) + 1

    def pair_iou(ps: Segment, gs: Segment) -> float:
        i = inter.get((ps, gs), 0)
        u = p_area[ps] - p_void.get(ps, 0) + g_area[gs] - i
        return i / u if u else 0.0

    best_pairs: set[tuple[Segment, Segment]] = set()
    for c in {s[0] for s in itertools.chain(p_area, g_area)}:
        preds = sorted(s for s in p_area if s[0] == c)
        gts = sorted(s for s in g_area if s[0] == c)
        best_key, best = (-1, -1.0), set()
        k = min(len(preds), len(gts))
        for chosen in itertools.permutations(preds, k):
            for g_subset in itertools.combinations(gts, k):
                pairs = {(p, g) for p, g in zip(chosen, g_subset) if pair_iou(p, g) > 0.5}
                key = (len(pairs), sum(pair_iou(p, g) for p, g in pairs))
                if key > best_key:
                    best_key, best = key, pairs
        best_pairs |= best
    return best_pairs


def _class_quality(matches: ClassMatches, scores: Sequence[float]) -> float:
    denom = len(matches.tp) + 0.5 * len(matches.fp) + 0.5 * len(matches.fn)
    return float(sum(scores)) / denom if denom else float("nan")


def pq(pred: PanopticPartMap, gt: PanopticPartMap, matches: SegmentMatchResult | None = None) -> dict:
    """Panoptic quality, averaged over classes that occur in either map."""
    matches = matches or match_segments(pred, gt)
    per_class = {c: _class_quality(m, [q for _, _, q in m.tp]) for c, m in matches.per_class.items()}
    return {"PQ": _mean(per_class.values()), "per_class": dict(sorted(per_class.items()))}


def _part_quality(pred: PanopticPartMap, gt: PanopticPartMap, ps: Segment, gs: Segment) -> float | None:
    p_in = ((pred.labels >> 8) == ((ps[0] << 16) | ps[1])) & ~pred.void_mask
    g_in = ((gt.labels >> 8) == ((gs[0] << 16) | gs[1])) & ~gt.void_mask
    region = (p_in | g_in) & ~gt.void_mask
    p_part = np.where(p_in & region, pred.part, 0)
    g_part = np.where(g_in & region, gt.part, 0)
    present = sorted((set(np.unique(p_part)) | set(np.unique(g_part))) - {0})
    if not present:
        return None
    ious = []
    for k in present:
        a, b = p_part == k, g_part == k
        ious.append(np.count_nonzero(a & b) / np.count_nonzero(a | b))
    return float(np.mean(ious))


def part_pq(pred: PanopticPartMap, gt: PanopticPartMap, t: ClassTaxonomy, matches: SegmentMatchResult | None = None) -> dict:
    """PartPQ over all classes and split into partitionable (P) / others (NP)."""
    matches = matches or match_segments(pred, gt)
    per_class = {}
    for c, m in matches.per_class.items():
        scores = []
        for ps, gs, seg_iou in m.tp:
            q = _part_quality(pred, gt, ps, gs) if t.is_partitionable(c) else None
            scores.append(seg_iou if q is None else q)
        per_class[c] = _class_quality(m, scores)
    p_scores = [v for c, v in per_class.items() if t.is_partitionable(c)]
    np_scores = [v for c, v in per_class.items() if not t.is_partitionable(c)]
    return {
        "All": _mean(per_class.values()),
        "P": _mean(p_scores),
        "NP": _mean(np_scores),
        "per_class": dict(sorted(per_class.items())),
    }


def density(m: PanopticPartMap) -> float:
    total = m.labels.size
    return float(np.count_nonzero(~m.void_mask)) / total if total else 0.0


def _mean(values: Iterable[float]) -> float | None:
    vals = [v for v in values if not np.isnan(v)]
    return float(np.mean(vals)) if vals else None


def evaluate(pred: PanopticPartMap, gt: PanopticPartMap, t: ClassTaxonomy) -> dict:
    """All headline metrics for one prediction, as emitted by ``jppf eval``."""
    matches = match_segments(pred, gt)
    ppq = part_pq(pred, gt, t, matches)
    _, sem = semantic_miou(pred, gt, t)
    _, part = part_miou(pred, gt, t)
    return {
        "PartPQ": {"All": ppq["All"], "P": ppq["P"], "NP": ppq["NP"]},
        "PQ": pq(pred, gt, matches)["PQ"],
        "mIoU_semantic": None if np.isnan(sem) else sem,
        "mIoU_part": None if np.isnan(part) else part,
        "density": density(pred),
        "per_class": {
            c: {"PartPQ": v, "partitionable": t.is_partitionable(c)} for c, v in ppq["per_class"].items()
        },
    }
