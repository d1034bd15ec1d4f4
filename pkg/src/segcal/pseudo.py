"""Confidence-threshold sweeps and hard pseudo-label export.

Pixels whose prediction confidence is at least the threshold keep their
predicted class; everything else becomes the ignore id. Comparisons are
done in float64 against the float32 confidences, the same way everywhere,
so sweeps and exported pseudo-labels agree pixel for pixel.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from segcal.ensemble import HardPrediction
from segcal.errors import EmptyInputError, ShapeMismatchError
from segcal.tensorio import IGNORE_ID

DEFAULT_THRESHOLD = 0.9
DEFAULT_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 0.995)


def _check_thresholds(thresholds: Sequence[float]) -> np.ndarray:
    t = np.asarray(thresholds, dtype=np.float64)
    if t.ndim != 1 or len(t) == 0:
        raise ValueError("need a non-empty list of thresholds")
    if np.any(t <= 0) or np.any(t > 1):
        raise ValueError("thresholds must lie in (0, 1]")
    if np.any(np.diff(t) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    return t


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    annotated: int
    correct_annotated: int
    valid: int

    @property
    def precision(self) -> Optional[float]:
        return self.correct_annotated / self.annotated if self.annotated else None

    @property
    def recall(self) -> float:
        return self.correct_annotated / self.valid

    @property
    def coverage(self) -> float:
        return self.annotated / self.valid


@dataclass
class SweepCounts:
    """Mergeable integer counts behind a threshold sweep."""

    thresholds: np.ndarray
    annotated: np.ndarray
    correct: np.ndarray
    valid: int = 0

    @classmethod
    def empty(cls, thresholds: Sequence[float] = DEFAULT_GRID) -> "SweepCounts":
        t = _check_thresholds(thresholds)
        return cls(t, np.zeros(len(t), np.int64), np.zeros(len(t), np.int64), 0)

    def __add__(self, other: "SweepCounts") -> "SweepCounts":
        if not np.array_equal(self.thresholds, other.thresholds):
            raise ValueError("cannot merge sweeps over different thresholds")
        return SweepCounts(
            self.thresholds,
            self.annotated + other.annotated,
            self.correct + other.correct,
            self.valid + other.valid,
        )

    def add(self, pred: HardPrediction, gt: np.ndarray) -> "SweepCounts":
        if pred.labels.shape != gt.shape:
            raise ShapeMismatchError(f"prediction {pred.labels.shape} vs labels {gt.shape}")
        valid = gt != IGNORE_ID
        conf = np.sort(pred.confidence[valid].astype(np.float64))
        conf_ok = np.sort(pred.confidence[valid & (pred.labels == gt)].astype(np.float64))
        # count of values >= t is len - (number of values < t)
        ann = len(conf) - np.searchsorted(conf, self.thresholds, side="left")
        cor = len(conf_ok) - np.searchsorted(conf_ok, self.thresholds, side="left")
        return SweepCounts(
            self.thresholds, self.annotated + ann, self.correct + cor, self.valid + len(conf)
        )

    def points(self) -> list[SweepPoint]:
        if self.valid == 0:
            raise EmptyInputError("sweep over zero valid pixels")
        return [
            SweepPoint(float(t), int(a), int(c), self.valid)
            for t, a, c in zip(self.thresholds, self.annotated, self.correct)
        ]


def threshold_sweep(
    pred: HardPrediction, gt: np.ndarray, thresholds: Sequence[float] = DEFAULT_GRID
) -> list[SweepPoint]:
    return SweepCounts.empty(thresholds).add(pred, gt).points()


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "precision", "recall", "coverage", "annotated", "correct", "valid"])
    for p in points:
        w.writerow([
            repr(p.threshold),
            "" if p.precision is None else repr(p.precision),
            repr(p.recall),
            repr(p.coverage),
            p.annotated,
            p.correct_annotated,
            p.valid,
        ])
    return buf.getvalue()


@dataclass
class PseudoLabelSet:
    labels: np.ndarray
    threshold: float
    coverage: float


def make_pseudo_labels(pred: HardPrediction, threshold: float = DEFAULT_THRESHOLD) -> PseudoLabelSet:
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold {threshold} outside (0, 1]")
    keep = pred.confidence.astype(np.float64) >= threshold
    labels = np.where(keep, pred.labels, IGNORE_ID).astype(np.uint8)
    return PseudoLabelSet(labels, float(threshold), float(keep.mean()))


@dataclass(frozen=True)
class PseudoQuality:
    annotated: int
    correct: int
    valid: int

    @property
    def coverage_vs_valid(self) -> float:
        return self.annotated / self.valid if self.valid else 0.0

    @property
    def precision(self) -> Optional[float]:
        return self.correct / self.annotated if self.annotated else None

    def __add__(self, other: "PseudoQuality") -> "PseudoQuality":
        return PseudoQuality(
            self.annotated + other.annotated,
            self.correct + other.correct,
            self.valid + other.valid,
        )


def pseudo_quality(ps: PseudoLabelSet, gt: np.ndarray) -> PseudoQuality:
    """Annotated fraction and accuracy of pseudo-labels, over valid gt pixels."""
    if ps.labels.shape != gt.shape:
        raise ShapeMismatchError(f"pseudo-labels {ps.labels.shape} vs labels {gt.shape}")
    valid = gt != IGNORE_ID
    annotated = valid & (ps.labels != IGNORE_ID)
    return PseudoQuality(
        int(annotated.sum()),
        int((annotated & (ps.labels == gt)).sum()),
        int(valid.sum()),
    )
