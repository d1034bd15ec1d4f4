"""Confusion-matrix segmentation metrics: per-class IoU, mIoU, pixel accuracy.

Counts are pooled over every accumulated image (one matrix per dataset).
A class absent from both ground truth and prediction has undefined IoU and
is left out of the mean; a class present in only one of them scores 0.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from segcal.errors import EmptyInputError, InvariantError, ShapeMismatchError
from segcal.tensorio import IGNORE_ID


@dataclass
class ConfusionMatrix:
    """``counts[g, p]`` is the number of valid pixels with truth g predicted as p."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.uint64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ShapeMismatchError(f"confusion matrix must be square, got {self.counts.shape}")

    @classmethod
    def zeros(cls, classes: int) -> "ConfusionMatrix":
        if classes < 1:
            raise ValueError("need at least one class")
        return cls(np.zeros((classes, classes), dtype=np.uint64))

    @property
    def classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return merge(self, other)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)


def accumulate(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    """Return ``cm`` plus the counts of every pixel whose ground truth is not ignore."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = gt != IGNORE_ID
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    c = cm.classes
    if g.size and (g.max() >= c or g.min() < 0):
        raise InvariantError(f"ground-truth class id out of range for {c} classes")
    if p.size and (p.max() >= c or p.min() < 0):
        raise InvariantError(f"predicted class id out of range for {c} classes")
    add = np.bincount(g * c + p, minlength=c * c).astype(np.uint64).reshape(c, c)
    return ConfusionMatrix(cm.counts + add)


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    if a.classes != b.classes:
        raise ValueError(f"cannot merge {a.classes}-class and {b.classes}-class matrices")
    return ConfusionMatrix(a.counts + b.counts)


def iou_per_class(cm: ConfusionMatrix) -> list[Optional[float]]:
    tp = np.diag(cm.counts).astype(np.int64)
    rows = cm.counts.sum(axis=1).astype(np.int64)
    cols = cm.counts.sum(axis=0).astype(np.int64)
    union = rows + cols - tp
    return [int(t) / int(u) if u else None for t, u in zip(tp, union)]


def miou(cm: ConfusionMatrix) -> float:
    defined = [v for v in iou_per_class(cm) if v is not None]
    if not defined:
        raise EmptyInputError("no class has a defined IoU")
    return sum(defined) / len(defined)


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    n = cm.total
    if n == 0:
        raise EmptyInputError("pixel accuracy over zero pixels")
    return int(np.trace(cm.counts)) / n


@dataclass(frozen=True)
class MetricReport:
    per_class_iou: list[Optional[float]]
    miou: float
    pixel_accuracy: float
    valid_pixels: int

    @classmethod
    def from_matrix(cls, cm: ConfusionMatrix) -> "MetricReport":
        return cls(iou_per_class(cm), miou(cm), pixel_accuracy(cm), cm.total)

    def to_dict(self) -> dict:
        return {
            "per_class_iou": list(self.per_class_iou),
            "miou": self.miou,
            "pixel_accuracy": self.pixel_accuracy,
            "valid_pixels": self.valid_pixels,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        """Header plus one row; undefined IoUs are empty cells."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = len(self.per_class_iou)
        w.writerow(["miou", "pixel_accuracy", "valid_pixels"] + [f"iou_{c}" for c in range(n)])
        w.writerow(
            [repr(self.miou), repr(self.pixel_accuracy), self.valid_pixels]
            + ["" if v is None else repr(v) for v in self.per_class_iou]
        )
        return buf.getvalue()
