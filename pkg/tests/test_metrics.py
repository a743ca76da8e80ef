import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freeseg.assignment import SegmentationMap
from freeseg.errors import EmptyAccumulator, ShapeMismatch
from freeseg.evaluation.metrics import (
    EvalAccumulator,
    merge,
    miou,
    per_class_iou,
    pixel_accuracy,
    update,
)


def seg(arr) -> SegmentationMap:
    return SegmentationMap(labels=np.asarray(arr, dtype=np.int64))


def brute_force_confusion(gt, pred, n_classes, ignore=255):
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for g, p in zip(np.asarray(gt).ravel(), np.asarray(pred).ravel()):
        if g == ignore:
            continue
        counts[g, p] += 1
    return counts


def test_perfect_prediction():
    acc = EvalAccumulator.empty(3)
    gt = seg([[0, 1], [2, 1]])
    update(acc, gt, gt)
    assert miou(acc) == 1.0
    assert pixel_accuracy(acc) == 1.0


def test_hand_counted_example():
    # gt [0,0,1,1] vs pred [0,1,1,1]: IoU_0 = 1/2, IoU_1 = 2/3, mIoU = 7/12
    acc = EvalAccumulator.empty(2)
    update(acc, seg([[0, 0, 1, 1]]), seg([[0, 1, 1, 1]]))
    iou = per_class_iou(acc)
    assert iou[0] == pytest.approx(1 / 2)
    assert iou[1] == pytest.approx(2 / 3)
    assert miou(acc) == pytest.approx(7 / 12)
    assert pixel_accuracy(acc) == pytest.approx(3 / 4)


def test_ignore_pixels_not_scored():
    acc = EvalAccumulator.empty(2)
    gt = seg([[255, 255], [255, 255]])
    update(acc, gt, seg([[0, 1], [1, 0]]))
    assert acc.total == 0
    with pytest.raises(EmptyAccumulator):
        miou(acc)


def test_absent_classes_excluded_from_mean():
    acc = EvalAccumulator.empty(5)
    update(acc, seg([[0, 1]]), seg([[0, 1]]))
    iou = per_class_iou(acc)
    assert np.isnan(iou[2]) and np.isnan(iou[3]) and np.isnan(iou[4])
    assert miou(acc) == 1.0


def test_shape_mismatch():
    acc = EvalAccumulator.empty(2)
    with pytest.raises(ShapeMismatch):
        update(acc, seg([[0]]), seg([[0, 1]]))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), h=st.integers(1, 16), w=st.integers(1, 16),
       n_classes=st.integers(2, 8))
def test_matches_brute_force_counting(seed, h, w, n_classes):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, n_classes, size=(h, w))
    gt[rng.random((h, w)) < 0.1] = 255
    pred = rng.integers(0, n_classes, size=(h, w))
    acc = EvalAccumulator.empty(n_classes)
    update(acc, seg(gt), seg(pred))
    assert np.array_equal(acc.confusion, brute_force_confusion(gt, pred, n_classes))


def test_update_order_independent():
    rng = np.random.default_rng(4)
    gt = rng.integers(0, 3, size=(8, 8))
    pred = rng.integers(0, 3, size=(8, 8))
    a = EvalAccumulator.empty(3)
    update(a, seg(gt), seg(pred))
    # permute the pixel pairs: same multiset, same confusion
    order = rng.permutation(64)
    b = EvalAccumulator.empty(3)
    update(b, seg(gt.ravel()[order].reshape(8, 8)), seg(pred.ravel()[order].reshape(8, 8)))
    assert np.array_equal(a.confusion, b.confusion)


def test_merge_is_addition():
    rng = np.random.default_rng(5)
    maps = [(rng.integers(0, 4, size=(6, 6)), rng.integers(0, 4, size=(6, 6)))
            for _ in range(4)]
    whole = EvalAccumulator.empty(4)
    for g, p in maps:
        update(whole, seg(g), seg(p))
    half1, half2 = EvalAccumulator.empty(4), EvalAccumulator.empty(4)
    for g, p in maps[:2]:
        update(half1, seg(g), seg(p))
    for g, p in maps[2:]:
        update(half2, seg(g), seg(p))
    assert np.array_equal(merge(half1, half2).confusion, whole.confusion)


def test_out_of_range_labels_rejected():
    acc = EvalAccumulator.empty(2)
    with pytest.raises(ValueError):
        update(acc, seg([[0, 5]]), seg([[0, 0]]))
    with pytest.raises(ValueError):
        update(acc, seg([[0, 0]]), seg([[0, 5]]))
