"""Minimal standalone SVG charts: reliability diagram and threshold sweep."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

from segcal.calibration import ReliabilityRecord
from segcal.pseudo import SweepPoint

SIZE = 320
PAD = 40


def _xy(u: float, v: float) -> tuple[float, float]:
    span = SIZE - 2 * PAD
    return PAD + u * span, SIZE - PAD - v * span


def _frame(title: str, xlabel: str, ylabel: str) -> list[str]:
    x0, y0 = _xy(0, 0)
    x1, y1 = _xy(1, 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
        f'viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">',
        f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="black"/>',
        f'<text x="{SIZE / 2}" y="{PAD / 2}" text-anchor="middle">{escape(title)}</text>',
        f'<text x="{SIZE / 2}" y="{SIZE - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="12" y="{SIZE / 2}" text-anchor="middle" '
        f'transform="rotate(-90 12 {SIZE / 2})">{escape(ylabel)}</text>',
    ]
    for t in (0.0, 0.5, 1.0):
        x, _ = _xy(t, 0)
        _, y = _xy(0, t)
        parts.append(f'<text x="{x}" y="{y0 + 14}" text-anchor="middle">{t:g}</text>')
        parts.append(f'<text x="{x0 - 4}" y="{y + 4}" text-anchor="end">{t:g}</text>')
    return parts


def reliability_svg(records: Sequence[ReliabilityRecord], title: str = "Reliability") -> str:
    """Accuracy bars per confidence bin against the identity diagonal."""
    parts = _frame(title, "confidence", "accuracy")
    for r in records:
        if r.accuracy is None:
            continue
        x0, y0 = _xy(r.lo, 0)
        x1, y1 = _xy(r.hi, r.accuracy)
        parts.append(
            f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0:.2f}" height="{y0 - y1:.2f}" '
            f'fill="steelblue" stroke="white"/>'
        )
    (ax, ay), (bx, by) = _xy(0, 0), _xy(1, 1)
    parts.append(f'<line x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}" stroke="gray" stroke-dasharray="4"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def sweep_svg(points: Sequence[SweepPoint], title: str = "Threshold sweep") -> str:
    """Precision and coverage against threshold."""
    parts = _frame(title, "threshold", "fraction")
    series = (
        ("precision", "firebrick", [(p.threshold, p.precision) for p in points]),
        ("coverage", "steelblue", [(p.threshold, p.coverage) for p in points]),
    )
    for i, (name, color, pts) in enumerate(series):
        xy = [_xy(t, v) for t, v in pts if v is not None]
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in xy)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        lx, ly = _xy(0.05, 0.12 - 0.07 * i)
        parts.append(f'<text x="{lx}" y="{ly}" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
