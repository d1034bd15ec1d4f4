"""Independent oracles and random generators shared by the test modules."""

from __future__ import annotations

import numpy as np

from segcal.tensorio import IGNORE_ID

# (confidence, correct) for the hand-worked four-pixel stream
FOUR_PIXELS = [(0.95, True), (0.95, False), (0.65, True), (0.55, True)]


def brute_force_ece(pairs, bins: int) -> float:
    """ECE in percent from stored pairs, bin membership by literal comparison."""
    n = len(pairs)
    total = 0.0
    for m in range(1, bins + 1):
        lo, hi = (m - 1) / bins, m / bins
        members = [
            (c, ok) for c, ok in pairs
            if (lo < c <= hi) or (m == 1 and c == 0.0)
        ]
        if not members:
            continue
        acc = sum(ok for _, ok in members) / len(members)
        conf = sum(c for c, _ in members) / len(members)
        total += len(members) / n * abs(acc - conf)
    return 100.0 * total


def random_probmap(rng: np.random.Generator, h: int, w: int, c: int, sharp: float = 1.0) -> np.ndarray:
    """Dirichlet rows rounded to float32; passes the 1e-4 normalization check."""
    p = rng.dirichlet(np.full(c, sharp), size=(h, w))
    return p.astype(np.float32)


def random_labels(rng, h: int, w: int, c: int, ignore_frac: float = 0.1) -> np.ndarray:
    labels = rng.integers(0, c, (h, w)).astype(np.uint8)
    labels[rng.random((h, w)) < ignore_frac] = IGNORE_ID
    return labels


def four_pixel_probmap() -> tuple[np.ndarray, np.ndarray]:
    """Two-class (1, 4) map and labels realizing FOUR_PIXELS in float32."""
    conf = np.array([0.95, 0.95, 0.65, 0.55], dtype=np.float32)
    probs = np.stack([conf, 1 - conf], axis=-1)[None].astype(np.float32)
    gt = np.array([[0, 1, 0, 0]], dtype=np.uint8)
    return probs, gt
