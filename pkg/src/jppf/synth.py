"""Synthetic scenes, a naive reference fusion, and the conflict suite.

Scenes are horizontal stuff bands with rectangular or elliptic things drawn on
top; parts of a partitionable thing are horizontal bands over its box, one
per entry of ``class_parts``. Predictions are produced from the ground truth
by optional label flips and Gaussian logit noise followed by a temperature
softmax, so every value lands in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import ndimage

from jppf.errors import InvalidSpec
from jppf.fusion import DenseLogits, FusionConfig
from jppf.instances import CanvasInstance, InstancePrediction, box_iou
from jppf.taxonomy import ClassTaxonomy, PanopticPartMap, VOID_VALUE

BOX_IOU_LIMIT = 0.4


@dataclass(frozen=True)
class NoiseModel:
    temperature: float = 0.05
    flip_prob: float = 0.0
    logit_noise: float = 0.0
    confidence_jitter: float = 0.0
    part_shift: int = 0  # < 0 erodes part masks of partitionable things, > 0 dilates

    @property
    def is_clean(self) -> bool:
        return self.flip_prob == 0 and self.logit_noise == 0 and self.part_shift == 0


@dataclass(frozen=True)
class ThingSpec:
    class_id: int
    box: tuple[int, int, int, int]  # x0, y0, x1, y1
    shape: str = "rect"


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    seed: int = 0
    stuff_regions: int = 3
    things: tuple[ThingSpec, ...] = ()
    noise: NoiseModel = field(default_factory=NoiseModel)
    min_stuff_area: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> SceneSpec:
        data = dict(data)
        data["things"] = tuple(
            ThingSpec(int(t["class_id"]), tuple(int(v) for v in t["box"]), t.get("shape", "rect"))
            for t in data.get("things", ())
        )
        data["noise"] = NoiseModel(**data.get("noise", {}))
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    gt: PanopticPartMap
    semantic: DenseLogits
    parts: DenseLogits
    instances: list[InstancePrediction]
    part_gt: np.ndarray  # grouped part id per pixel as predicted (shift applied)


def _check_spec(spec: SceneSpec, t: ClassTaxonomy) -> None:
    n = spec.noise
    problems = []
    if spec.height < 1 or spec.width < 1:
        problems.append("canvas must be non-empty")
    if not 0 <= n.flip_prob < 1:
        problems.append("flip_prob must lie in [0, 1)")
    if n.temperature <= 0:
        problems.append("temperature must be > 0")
    if not 0 <= n.confidence_jitter < 0.5:
        problems.append("confidence_jitter must lie in [0, 0.5)")
    if spec.stuff_regions < 1 or spec.stuff_regions > spec.height:
        problems.append("stuff_regions must lie in 1..height")
    if not t.stuff_classes:
        problems.append("taxonomy has no stuff classes")
    for th in spec.things:
        x0, y0, x1, y1 = th.box
        if not (0 <= x0 < x1 <= spec.width and 0 <= y0 < y1 <= spec.height):
            problems.append(f"box {th.box} outside the canvas")
        if not t.is_thing(th.class_id):
            problems.append(f"class {th.class_id} is not a thing")
        if th.shape not in ("rect", "ellipse"):
            problems.append(f"unknown shape {th.shape!r}")
    if problems:
        raise InvalidSpec("; ".join(problems))


def _shape_mask(th: ThingSpec, height: int, width: int) -> np.ndarray:
    x0, y0, x1, y1 = th.box
    out = np.zeros((height, width), bool)
    if th.shape == "rect":
        out[y0:y1, x0:x1] = True
        return out
    yy, xx = np.mgrid[y0:y1, x0:x1]
    cy, cx = (y0 + y1 - 1) / 2, (x0 + x1 - 1) / 2
    ry, rx = max((y1 - y0) / 2, 0.5), max((x1 - x0) / 2, 0.5)
    out[y0:y1, x0:x1] = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return out


def _band_index(th: ThingSpec, rows: np.ndarray, n: int) -> np.ndarray:
    y0, y1 = th.box[1], th.box[3]
    idx = ((rows - y0) * n) // (y1 - y0)
    return np.clip(idx, 0, n - 1)


def _soft_labels(rng: np.random.Generator, labels: np.ndarray, n: int, noise: NoiseModel) -> np.ndarray:
    """Per-pixel class indices -> n x H x W activations in [0, 1]."""
    labels = labels.copy()
    if noise.flip_prob > 0:
        flip = rng.random(labels.shape) < noise.flip_prob
        labels[flip] = rng.integers(0, n, size=int(flip.sum()))
    z = (np.arange(n)[:, None, None] == labels[None]).astype(np.float64)
    if noise.logit_noise > 0:
        z += rng.normal(0.0, noise.logit_noise, size=z.shape)
    z /= noise.temperature
    z -= z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return np.clip(e / e.sum(axis=0, keepdims=True), 0.0, 1.0).astype(np.float32)


def stuff_region_sizes(semantic: np.ndarray, instance: np.ndarray, t: ClassTaxonomy) -> list[int]:
    sizes = []
    for s in t.stuff_classes:
        comp, n = ndimage.label((semantic == s) & (instance == 0))
        sizes += np.bincount(comp.ravel())[1:].tolist()
    return sizes


def generate(spec: SceneSpec, t: ClassTaxonomy) -> Scene:
    """Ground truth plus predictions for one spec; a pure function of (spec, t)."""
    _check_spec(spec, t)
    rng = np.random.default_rng(spec.seed)
    h, w, noise = spec.height, spec.width, spec.noise

    cuts = np.sort(rng.choice(np.arange(1, h), size=spec.stuff_regions - 1, replace=False)) if spec.stuff_regions > 1 else []
    classes = []
    for _ in range(spec.stuff_regions):
        options = [s for s in t.stuff_classes if not classes or s != classes[-1]] or list(t.stuff_classes)
        classes.append(options[rng.integers(len(options))])
    semantic = np.empty((h, w), np.int64)
    for s, rows in zip(classes, np.split(np.arange(h), cuts)):
        semantic[rows] = s
    instance = np.zeros((h, w), np.int64)
    part = np.zeros((h, w), np.int64)
    group_idx = np.zeros((h, w), np.int64)
    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))

    for k, th in enumerate(spec.things, start=1):
        m = _shape_mask(th, h, w)
        semantic[m] = th.class_id
        instance[m] = k
        part[m] = 0
        group_idx[m] = 0
        n = t.num_parts(th.class_id)
        if n:
            band = _band_index(th, rows[m], n)
            part[m] = band + 1
            channels = np.array([t.part_channel(g) for g in t.class_parts[th.class_id]])
            group_idx[m] = channels[band]

    visible = [instance == k for k in range(1, len(spec.things) + 1)]
    for th, vis in zip(spec.things, visible):
        if not vis.any():
            raise InvalidSpec(f"thing {th} is fully occluded")
    if spec.min_stuff_area:
        small = [a for a in stuff_region_sizes(semantic, instance, t) if a < spec.min_stuff_area]
        if small:
            raise InvalidSpec(f"stuff regions below {spec.min_stuff_area} px: {small}")

    confidences = [1.0 - noise.confidence_jitter * rng.random() for _ in spec.things]
    order = sorted(range(len(spec.things)), key=lambda i: -confidences[i])
    new_id = np.zeros(len(spec.things) + 1, np.int64)
    for rank, i in enumerate(order, start=1):
        new_id[i + 1] = rank
    gt = PanopticPartMap.from_components(semantic, new_id[instance], part)

    pred_groups = group_idx.copy()
    if noise.part_shift:
        for th, vis in zip(spec.things, visible):
            n = t.num_parts(th.class_id)
            if not n:
                continue
            r = abs(noise.part_shift)
            if noise.part_shift < 0:
                ring = vis & ~ndimage.binary_erosion(vis, iterations=r)
                pred_groups[ring] = 0
            else:
                ring = ndimage.binary_dilation(vis, iterations=r) & ~vis & (instance == 0)
                channels = np.array([t.part_channel(g) for g in t.class_parts[th.class_id]])
                pred_groups[ring] = channels[_band_index(th, rows[ring], n)]

    lut = np.zeros(256, np.int64)
    lut[list(t.semantic_classes)] = np.arange(len(t.semantic_classes))
    sem_idx = lut[semantic]
    S = DenseLogits(_soft_labels(rng, sem_idx, len(t.semantic_classes), noise), t.semantic_classes)
    P = DenseLogits(_soft_labels(rng, pred_groups, len(t.part_groups), noise), t.part_groups)

    preds = []
    for th, vis, conf in zip(spec.things, visible, confidences):
        x0, y0, x1, y1 = th.box
        crop = vis[y0:y1, x0:x1].astype(np.int64)
        mask = _soft_labels(rng, crop, 2, noise)[1]
        preds.append(InstancePrediction(mask, (x0, y0, x1, y1), th.class_id, conf))
    part_groups = np.array(t.part_groups)[pred_groups]
    return Scene(spec, gt, S, P, preds, part_groups)


def random_things(
    rng: np.random.Generator, t: ClassTaxonomy, height: int, width: int, count: int
) -> tuple[ThingSpec, ...]:
    """Up to ``count`` things whose boxes overlap by at most BOX_IOU_LIMIT."""
    things: list[ThingSpec] = []
    for _ in range(count * 20):
        if len(things) == count or not t.thing_classes:
            break
        bh = int(rng.integers(max(2, height // 6), max(3, height // 2) + 1))
        bw = int(rng.integers(max(2, width // 6), max(3, width // 2) + 1))
        y0 = int(rng.integers(0, height - bh + 1))
        x0 = int(rng.integers(0, width - bw + 1))
        box = (x0, y0, x0 + bw, y0 + bh)
        if any(box_iou(box, o.box) > BOX_IOU_LIMIT for o in things):
            continue
        c = t.thing_classes[rng.integers(len(t.thing_classes))]
        shape = "ellipse" if rng.random() < 0.5 else "rect"
        things.append(ThingSpec(int(c), box, shape))
    return tuple(things)


def random_scene_spec(
    t: ClassTaxonomy,
    seed: int,
    height: int = 32,
    width: int = 32,
    max_things: int = 6,
    noise: NoiseModel = NoiseModel(),
    min_stuff_area: int = 0,
    require_partitionable: bool = False,
    attempts: int = 200,
) -> SceneSpec:
    """Draw a spec that :func:`generate` accepts (no occluded things, big stuff regions)."""
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        n = int(rng.integers(0, max_things + 1))
        things = random_things(rng, t, height, width, n)
        if require_partitionable and not any(t.is_partitionable(th.class_id) for th in things):
            continue
        spec = SceneSpec(
            height=height,
            width=width,
            seed=int(rng.integers(2**31)),
            stuff_regions=int(rng.integers(1, min(4, height) + 1)),
            things=things,
            noise=noise,
            min_stuff_area=min_stuff_area,
        )
        try:
            generate(spec, t)
        except InvalidSpec:
            continue
        return spec
    raise InvalidSpec(f"no valid scene found in {attempts} attempts (seed {seed})")


def random_taxonomy(rng: np.random.Generator, max_stuff: int = 4, max_things: int = 4, max_groups: int = 5) -> ClassTaxonomy:
    n_st = int(rng.integers(1, max_stuff + 1))
    n_th = int(rng.integers(0, max_things + 1))
    ids = [int(v) for v in rng.choice(np.arange(1, 256), size=n_st + n_th, replace=False)]
    n_groups = int(rng.integers(1, max_groups + 1))
    groups = tuple(int(v) for v in rng.choice(np.arange(0, 50), size=n_groups + 1, replace=False))
    class_parts = {}
    for c in ids[n_st:]:
        if rng.random() < 0.6:
            k = int(rng.integers(1, n_groups + 1))
            class_parts[c] = tuple(int(g) for g in rng.choice(groups[1:], size=k, replace=False))
    return ClassTaxonomy(tuple(ids[:n_st]), tuple(ids[n_st:]), groups, class_parts)


def conflict_suite(n: int, seed: int, t: ClassTaxonomy, height: int = 128, width: int = 192, min_stuff_area: int = 2048) -> list[SceneSpec]:
    """Scenes whose part predictions are eroded around partitionable things."""
    if n < 1:
        raise ValueError("conflict suite needs n >= 1")
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        noise = NoiseModel(
            temperature=float(rng.uniform(0.05, 0.3)),
            confidence_jitter=float(rng.uniform(0.0, 0.3)),
            part_shift=-int(rng.integers(1, 4)),
        )
        try:
            spec = random_scene_spec(
                t,
                int(rng.integers(2**31)),
                height,
                width,
                max_things=4,
                noise=noise,
                min_stuff_area=min_stuff_area,
                require_partitionable=True,
            )
        except InvalidSpec:
            continue
        out.append(spec)
    return out


def without_conflicts(spec: SceneSpec) -> SceneSpec:
    return replace(spec, noise=replace(spec.noise, part_shift=0, flip_prob=0.0, logit_noise=0.0))


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def _fl(values: Sequence[float]) -> float:
    sig = 0.0
    total = 0.0
    for v in values:
        sig += _sigmoid(v)
        total += v
    return sig * total


def oracle_fuse(
    S: DenseLogits,
    P: DenseLogits,
    instances: Sequence[CanvasInstance],
    cfg: FusionConfig,
    t: ClassTaxonomy,
) -> PanopticPartMap:
    """Per-pixel reference fusion written with plain loops.

    Every candidate label is enumerated at every pixel and scored with the
    scalar fusion rule; the maximum wins, earliest candidate on ties.
    """
    h, w = S.spatial_shape
    sem = {c: S.values[k].tolist() for k, c in enumerate(S.channel_meta)}
    prt = {g: P.values[k].tolist() for k, g in enumerate(P.channel_meta)}
    bg = t.part_groups[0]
    insts = sorted(instances, key=lambda i: i.instance_id)
    masks = [i.mask.tolist() for i in insts]

    out = [[VOID_VALUE] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            best_score, best_label, best_is_thing = None, None, False
            for s in t.stuff_classes:
                if s in t.class_parts:
                    for k, g in enumerate(t.class_parts[s], start=1):
                        score = _fl([sem[s][y][x], prt[g][y][x]])
                        if best_score is None or score > best_score:
                            best_score, best_label, best_is_thing = score, (s, 0, k), False
                else:
                    score = _fl([sem[s][y][x], prt[bg][y][x]])
                    if best_score is None or score > best_score:
                        best_score, best_label, best_is_thing = score, (s, 0, 0), False
            for inst, mask in zip(insts, masks):
                y0, y1, x0, x1 = inst.window
                inside = y0 <= y < y1 and x0 <= x < x1
                c = inst.class_id
                mls = sem[c][y][x] if inside else 0.0
                mli = mask[y][x]
                groups = t.class_parts.get(c)
                options = list(enumerate(groups, start=1)) if groups else [(0, bg)]
                for k, g in options:
                    mlp = prt[g][y][x] if inside else 0.0
                    score = _fl([mls, mli, mlp])
                    if best_score is None or score > best_score:
                        best_score, best_label, best_is_thing = score, (c, inst.instance_id, k), True
            if best_score is None:
                continue
            if best_is_thing:
                s, i, p = best_label
            else:
                s, top = None, None
                for cand in t.stuff_classes:
                    v = sem[cand][y][x]
                    if top is None or v > top:
                        s, top = cand, v
                i = p = 0
            out[y][x] = (s << 24) | (i << 8) | p

    if cfg.min_stuff_area > 0:
        stuff = set(t.stuff_classes)
        seen = [[False] * w for _ in range(h)]
        for y in range(h):
            for x in range(w):
                v = out[y][x]
                if seen[y][x] or v == VOID_VALUE or (v >> 24) not in stuff or (v >> 8) & 0xFFFF:
                    continue
                s = v >> 24
                region, todo = [], [(y, x)]
                seen[y][x] = True
                while todo:
                    cy, cx = todo.pop()
                    region.append((cy, cx))
                    for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                        if 0 <= ny < h and 0 <= nx < w and not seen[ny][nx]:
                            nv = out[ny][nx]
                            if nv != VOID_VALUE and nv >> 24 == s and not (nv >> 8) & 0xFFFF:
                                seen[ny][nx] = True
                                todo.append((ny, nx))
                if len(region) < cfg.min_stuff_area:
                    for cy, cx in region:
                        out[cy][cx] = VOID_VALUE
    return PanopticPartMap(np.array(out, dtype=np.uint32).reshape(h, w))
