import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jppf.errors import BoxOutOfCanvas, LogitRangeError
from jppf.instances import (
    InstancePrediction,
    box_iou,
    filter_and_sort,
    overlap_nms,
    paste_mask,
    preprocess_instances,
)


def pred(conf, box=(0, 0, 4, 4), mask=None, cls=10):
    return InstancePrediction(np.ones((2, 2)) if mask is None else mask, box, cls, conf)


def test_filter_and_sort():
    out = filter_and_sort([pred(0.9), pred(0.3), pred(0.7)], 0.5)
    assert [p.confidence for p in out] == [0.9, 0.7]


def test_filter_and_sort_edge_cases():
    assert filter_and_sort([], 0.5) == []
    assert filter_and_sort([pred(0.1), pred(0.2)], 0.5) == []


def test_sort_is_stable_on_ties():
    a, b, c = pred(0.8, cls=1), pred(0.8, cls=2), pred(0.9, cls=3)
    assert [p.class_id for p in filter_and_sort([a, b, c])] == [3, 1, 2]


def test_threshold_is_inclusive():
    assert len(filter_and_sort([pred(0.5)], 0.5)) == 1


@given(st.lists(st.floats(0, 1), max_size=12), st.floats(0, 1))
def test_filter_and_sort_idempotent(confs, thr):
    once = filter_and_sort([pred(c) for c in confs], thr)
    assert filter_and_sort(once, thr) == once
    assert all(a.confidence >= b.confidence for a, b in zip(once, once[1:]))


def test_paste_constant_mask():
    inst = paste_mask(pred(1.0, box=(2, 1, 6, 5), mask=np.ones((2, 2))), 8, 8)
    full = inst.mask
    assert full[1:5, 2:6].tolist() == np.ones((4, 4)).tolist()
    assert full.sum() == 16


def test_paste_single_value():
    inst = paste_mask(pred(1.0, box=(0, 0, 3, 3), mask=np.full((1, 1), 0.6)), 5, 5)
    assert np.allclose(inst.mask[:3, :3], 0.6)
    assert inst.mask.sum() == pytest.approx(9 * 0.6, rel=1e-6)


def _bilinear_row(values, n_out):
    # independent per-sample evaluation of half-pixel bilinear sampling
    n_in = len(values)
    out = []
    for d in range(n_out):
        src = min(max((d + 0.5) * n_in / n_out - 0.5, 0.0), n_in - 1.0)
        lo = int(src)
        hi = min(lo + 1, n_in - 1)
        f = src - lo
        out.append(values[lo] * (1 - f) + values[hi] * f)
    return out


def test_paste_bilinear_row():
    inst = paste_mask(pred(1.0, box=(0, 0, 4, 1), mask=np.array([[1.0, 0.0]])), 1, 4)
    row = inst.mask[0]
    expected = _bilinear_row([1.0, 0.0], 4)
    assert expected == [1.0, 0.75, 0.25, 0.0]
    assert np.allclose(row, expected)
    assert np.all(np.diff(row) <= 0)


def test_paste_rejects_box_outside():
    with pytest.raises(BoxOutOfCanvas):
        paste_mask(pred(1.0, box=(0, 0, 9, 4)), 8, 8)
    with pytest.raises(BoxOutOfCanvas):
        paste_mask(pred(1.0, box=(3, 0, 3, 4)), 8, 8)


def test_mask_range_is_checked():
    with pytest.raises(LogitRangeError):
        pred(1.0, mask=np.full((2, 2), 1.5))
    with pytest.raises(LogitRangeError):
        pred(1.2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 6))
def test_paste_range_and_zero_outside(seed, mh, mw):
    rng = np.random.default_rng(seed)
    h, w = 12, 14
    x0, y0 = int(rng.integers(0, w - 1)), int(rng.integers(0, h - 1))
    x1, y1 = int(rng.integers(x0 + 1, w + 1)), int(rng.integers(y0 + 1, h + 1))
    inst = paste_mask(pred(1.0, box=(x0, y0, x1, y1), mask=rng.random((mh, mw))), h, w)
    full = inst.mask
    assert full.min() >= 0.0 and full.max() <= 1.0
    outside = np.ones((h, w), bool)
    outside[y0:y1, x0:x1] = False
    assert np.all(full[outside] == 0)


def canvas(confs_boxes, h=20, w=20):
    return [paste_mask(pred(c, box=b), h, w) for c, b in confs_boxes]


def test_nms_identical_boxes():
    out = overlap_nms(canvas([(0.9, (0, 0, 4, 4)), (0.8, (0, 0, 4, 4))]), 0.5)
    assert [i.confidence for i in out] == [0.9]
    assert out[0].instance_id == 1


def test_nms_disjoint_boxes():
    out = overlap_nms(canvas([(0.9, (0, 0, 4, 4)), (0.8, (10, 10, 14, 14))]), 0.5)
    assert [i.instance_id for i in out] == [1, 2]


def test_nms_threshold_is_strict():
    a, b = (0, 0, 2, 2), (0, 0, 2, 4)
    assert box_iou(a, b) == 0.5
    assert len(overlap_nms(canvas([(0.9, a), (0.8, b)]), 0.5)) == 2


def test_nms_per_class_pools():
    insts = [paste_mask(pred(0.9, cls=10), 8, 8), paste_mask(pred(0.8, cls=11), 8, 8)]
    assert len(overlap_nms(insts, 0.5)) == 1
    assert len(overlap_nms(insts, 0.5, per_class=True)) == 2


def _iou_brute(a, b):
    pa = {(x, y) for x in range(a[0], a[2]) for y in range(a[1], a[3])}
    pb = {(x, y) for x in range(b[0], b[2]) for y in range(b[1], b[3])}
    return len(pa & pb) / len(pa | pb)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(1, 8), st.integers(1, 8)), min_size=2, max_size=2))
def test_box_iou_matches_pixel_count(boxes):
    a, b = [(x, y, x + w, y + h) for x, y, w, h in boxes]
    assert box_iou(a, b) == pytest.approx(_iou_brute(a, b))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 0.9))
def test_nms_fixed_point(seed, thr):
    rng = np.random.default_rng(seed)
    boxes = []
    for _ in range(8):
        x0, y0 = rng.integers(0, 15, size=2)
        boxes.append((float(rng.random()), (int(x0), int(y0), int(x0 + rng.integers(1, 6)), int(y0 + rng.integers(1, 6)))))
    ordered = sorted(boxes, key=lambda cb: -cb[0])
    kept = overlap_nms(canvas(ordered), thr)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            assert box_iou(a.box, b.box) <= thr
    again = overlap_nms(kept, thr)
    assert [i.box for i in again] == [i.box for i in kept]


def test_preprocess_composition():
    preds = [pred(0.3, box=(0, 0, 4, 4)), pred(0.7, box=(0, 0, 4, 4)), pred(0.9, box=(5, 5, 9, 9))]
    out = preprocess_instances(preds, 10, 10)
    assert [(i.confidence, i.instance_id) for i in out] == [(0.9, 1), (0.7, 2)]
