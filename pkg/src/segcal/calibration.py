"""Expected calibration error and reliability-diagram data.

Confidences are binned into ``M`` equal-width intervals ``((m-1)/M, m/M]``;
a confidence of exactly 0 is clamped into the first bin. Each bin keeps a
pixel count, the float64 sum of confidences and the number of correct
predictions, so partial accumulators over disjoint pixel sets merge by
element-wise addition.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from segcal.ensemble import argmax_prediction
from segcal.errors import EmptyInputError, ShapeMismatchError
from segcal.tensorio import IGNORE_ID

DEFAULT_BINS = 15


@dataclass
class CalibrationBins:
    count: np.ndarray
    sum_conf: np.ndarray
    sum_correct: np.ndarray

    @classmethod
    def empty(cls, bins: int = DEFAULT_BINS) -> "CalibrationBins":
        if bins < 1:
            raise ValueError("need at least one bin")
        return cls(
            np.zeros(bins, dtype=np.int64),
            np.zeros(bins, dtype=np.float64),
            np.zeros(bins, dtype=np.int64),
        )

    @property
    def bins(self) -> int:
        return len(self.count)

    @property
    def total(self) -> int:
        return int(self.count.sum())

    def edges(self) -> np.ndarray:
        return np.arange(self.bins + 1, dtype=np.float64) / self.bins

    def __add__(self, other: "CalibrationBins") -> "CalibrationBins":
        return merge_calibration(self, other)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CalibrationBins):
            return NotImplemented
        return (
            np.array_equal(self.count, other.count)
            and np.array_equal(self.sum_conf, other.sum_conf)
            and np.array_equal(self.sum_correct, other.sum_correct)
        )


def bin_index(confidence: np.ndarray, bins: int) -> np.ndarray:
    """Zero-based bin of each confidence under the ``((m-1)/M, m/M]`` rule.

    ``ceil(c * M)`` is only a first guess: the product can round across an
    edge, so the guess is nudged until ``lo < c <= hi`` holds with the same
    edge values ``m / M`` that :meth:`CalibrationBins.edges` reports.
    """
    c = np.asarray(confidence, dtype=np.float64)
    m = np.clip(np.ceil(c * bins).astype(np.int64), 1, bins)
    lo = (m - 1) / bins
    m = np.where((c <= lo) & (m > 1), m - 1, m)
    hi = m / bins
    m = np.where((c > hi) & (m < bins), m + 1, m)
    return m - 1


def accumulate_pairs(
    bins: CalibrationBins, confidence: np.ndarray, correct: np.ndarray
) -> CalibrationBins:
    """Add a stream of (confidence, correct) pairs; returns a new accumulator."""
    confidence = np.asarray(confidence, dtype=np.float64).ravel()
    correct = np.asarray(correct, dtype=bool).ravel()
    if confidence.shape != correct.shape:
        raise ShapeMismatchError("confidence and correctness streams differ in length")
    idx = bin_index(confidence, bins.bins)
    return CalibrationBins(
        bins.count + np.bincount(idx, minlength=bins.bins),
        bins.sum_conf + np.bincount(idx, weights=confidence, minlength=bins.bins),
        bins.sum_correct + np.bincount(idx[correct], minlength=bins.bins),
    )


def accumulate_calibration(
    bins: CalibrationBins, probs: np.ndarray, gt: np.ndarray
) -> CalibrationBins:
    """Add every non-ignore pixel of an (H, W, C) probability map."""
    if probs.shape[:-1] != gt.shape:
        raise ShapeMismatchError(f"probabilities {probs.shape} vs labels {gt.shape}")
    pred = argmax_prediction(probs)
    valid = gt != IGNORE_ID
    return accumulate_pairs(
        bins, pred.confidence[valid], pred.labels[valid] == gt[valid]
    )


def merge_calibration(a: CalibrationBins, b: CalibrationBins) -> CalibrationBins:
    if a.bins != b.bins:
        raise ValueError(f"cannot merge {a.bins}-bin and {b.bins}-bin accumulators")
    return CalibrationBins(
        a.count + b.count, a.sum_conf + b.sum_conf, a.sum_correct + b.sum_correct
    )


def ece(bins: CalibrationBins) -> float:
    """Expected calibration error in percent."""
    n = bins.total
    if n == 0:
        raise EmptyInputError("ECE of an empty accumulator")
    nz = bins.count > 0
    cnt = bins.count[nz].astype(np.float64)
    gap = np.abs(bins.sum_correct[nz] / cnt - bins.sum_conf[nz] / cnt)
    return float(np.sum(cnt / n * gap) * 100.0)


@dataclass(frozen=True)
class ReliabilityRecord:
    lo: float
    hi: float
    count: int
    weight: float
    avg_conf: Optional[float] = field(default=None)
    accuracy: Optional[float] = field(default=None)


def reliability_data(bins: CalibrationBins) -> list[ReliabilityRecord]:
    """One record per bin; empty bins carry ``None`` averages and weight 0."""
    n = bins.total
    edges = bins.edges()
    out = []
    for m in range(bins.bins):
        c = int(bins.count[m])
        if c == 0:
            out.append(ReliabilityRecord(float(edges[m]), float(edges[m + 1]), 0, 0.0))
            continue
        out.append(
            ReliabilityRecord(
                float(edges[m]),
                float(edges[m + 1]),
                c,
                c / n,
                float(bins.sum_conf[m] / c),
                float(bins.sum_correct[m] / c),
            )
        )
    return out


def confidence_histogram(bins: CalibrationBins) -> list[int]:
    return [int(c) for c in bins.count]


def reliability_csv(records: list[ReliabilityRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "avg_conf", "accuracy", "weight", "count"])
    for r in records:
        w.writerow([
            repr(r.lo),
            repr(r.hi),
            "" if r.avg_conf is None else repr(r.avg_conf),
            "" if r.accuracy is None else repr(r.accuracy),
            repr(r.weight),
            r.count,
        ])
    return buf.getvalue()
