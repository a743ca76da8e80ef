"""Segmentation metrics from per-class confusion counts.

The accumulator is a plain L x L integer matrix (rows ground truth, columns
prediction); pixels whose ground truth equals the ignore index are never
counted. Accumulators merge by addition, so parallel per-image evaluation
cannot change results.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..assignment import SegmentationMap
from ..errors import EmptyAccumulator, ShapeMismatch


@dataclass
class EvalAccumulator:
    confusion: np.ndarray  # L x L, int64
    ignore_index: int = 255

    @classmethod
    def empty(cls, n_classes: int, ignore_index: int = 255) -> "EvalAccumulator":
        return cls(confusion=np.zeros((n_classes, n_classes), dtype=np.int64),
                   ignore_index=ignore_index)

    @property
    def n_classes(self) -> int:
        return int(self.confusion.shape[0])

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


def update(acc: EvalAccumulator, gt: SegmentationMap, pred: SegmentationMap) -> EvalAccumulator:
    """Add one image's pixels: confusion[gt, pred] += 1 where gt is not ignored."""
    if gt.labels.shape != pred.labels.shape:
        raise ShapeMismatch(f"gt {gt.labels.shape} vs pred {pred.labels.shape}")
    L = acc.n_classes
    g = gt.labels.ravel().astype(np.int64)
    p = pred.labels.ravel().astype(np.int64)
    scored = g != acc.ignore_index
    g, p = g[scored], p[scored]
    if g.size:
        if g.max() >= L or g.min() < 0:
            raise ValueError(f"ground-truth label outside [0, {L})")
        if p.max() >= L or p.min() < 0:
            raise ValueError(f"predicted label outside [0, {L})")
        acc.confusion += np.bincount(g * L + p, minlength=L * L).reshape(L, L)
    return acc


def merge(a: EvalAccumulator, b: EvalAccumulator) -> EvalAccumulator:
    if a.confusion.shape != b.confusion.shape:
        raise ShapeMismatch("cannot merge accumulators of different class counts")
    return EvalAccumulator(confusion=a.confusion + b.confusion, ignore_index=a.ignore_index)


def per_class_iou(acc: EvalAccumulator) -> np.ndarray:
    """IoU per class; NaN marks classes with no TP, FP or FN (excluded from means)."""
    if acc.total == 0:
        raise EmptyAccumulator("no scored pixels")
    tp = np.diag(acc.confusion).astype(np.float64)
    fp = acc.confusion.sum(axis=0) - tp
    fn = acc.confusion.sum(axis=1) - tp
    denom = tp + fp + fn
    iou = np.full(acc.n_classes, np.nan)
    seen = denom > 0
    iou[seen] = tp[seen] / denom[seen]
    return iou


def miou(acc: EvalAccumulator) -> float:
    """Mean IoU over classes that appear at all (the unlabeled class included)."""
    return float(np.nanmean(per_class_iou(acc)))


def pixel_accuracy(acc: EvalAccumulator) -> float:
    if acc.total == 0:
        raise EmptyAccumulator("no scored pixels")
    return float(np.trace(acc.confusion) / acc.total)
