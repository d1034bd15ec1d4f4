"""Probability-averaging ensembles and hard predictions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from segcal.errors import EmptyInputError, ShapeMismatchError


@dataclass(frozen=True)
class HardPrediction:
    """Per-pixel argmax class and the probability attached to it.

    ``labels`` is an (H, W) uint8 raster without ignore ids, ``confidence``
    the matching (H, W) float32 raster of max probabilities.
    """

    labels: np.ndarray
    confidence: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def ensemble_average(members: Sequence[np.ndarray]) -> np.ndarray:
    """Average member probability maps entry-wise.

    Sums run in float64 over the member values sorted per entry, so the
    result is a function of the multiset of members: reordering them
    cannot change a single bit of the output. The mean is rounded to
    float32 once, at the end.
    """
    if len(members) == 0:
        raise EmptyInputError("ensemble needs at least one member")
    shape = np.shape(members[0])
    for i, m in enumerate(members):
        if np.shape(m) != shape:
            raise ShapeMismatchError(
                f"member {i} has shape {np.shape(m)}, expected {shape}"
            )
    if len(members) == 1:
        return np.asarray(members[0], dtype=np.float32).copy()
    stacked = np.sort(np.stack([np.asarray(m, dtype=np.float64) for m in members]), axis=0)
    acc = stacked[0].copy()
    for layer in stacked[1:]:
        acc += layer
    acc /= len(members)
    return acc.astype(np.float32)


def argmax_prediction(probs: np.ndarray) -> HardPrediction:
    """Hard prediction from an (H, W, C) map; ties go to the lowest class."""
    probs = np.asarray(probs)
    labels = np.argmax(probs, axis=-1)
    confidence = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    return HardPrediction(labels.astype(np.uint8), confidence.astype(np.float32))
