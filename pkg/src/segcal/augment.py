"""Seedable color jitter on (H, W, 3) float32 RGB images in [0, 1].

Brightness is additive, contrast pivots on each channel's image mean,
saturation blends against Rec.601 luma and hue rotates in HSV. Every
transform clamps to [0, 1] and is an exact identity at its neutral value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from segcal.errors import DimensionError, InvariantError

LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def _check(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got {img.shape}")
    return img.astype(np.float32, copy=False)


def _clamp(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def adjust_brightness(img: np.ndarray, delta: float) -> np.ndarray:
    img = _check(img)
    if abs(delta) > 1:
        raise ValueError(f"brightness delta {delta} outside [-1, 1]")
    if delta == 0:
        return img.copy()
    return _clamp(img + np.float32(delta))


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    img = _check(img)
    if not factor > 0:
        raise ValueError(f"contrast factor {factor} must be positive")
    if factor == 1:
        return img.copy()
    mean = img.mean(axis=(0, 1), dtype=np.float64).astype(np.float32)
    return _clamp(mean + (img - mean) * np.float32(factor))


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    img = _check(img)
    if factor < 0:
        raise ValueError(f"saturation factor {factor} must be non-negative")
    if factor == 1:
        return img.copy()
    gray = (img @ LUMA)[..., None]
    return _clamp(gray + (img - gray) * np.float32(factor))


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized equivalent of :func:`colorsys.rgb_to_hsv`; hue in [0, 1)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    span = v - rgb.min(axis=-1)
    chroma = span > 0
    safe = np.where(chroma, span, 1.0)
    s = np.where(v > 0, span / np.where(v > 0, v, 1.0), 0.0)
    rc, gc, bc = (v - r) / safe, (v - g) / safe, (v - b) / safe
    h = np.where(r == v, bc - gc, np.where(g == v, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(chroma, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Vectorized equivalent of :func:`colorsys.hsv_to_rgb`."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    choices = [
        np.stack(c, axis=-1)
        for c in ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))
    ]
    out = np.select([(i == k)[..., None] for k in range(6)], choices)
    return np.where((s == 0)[..., None], v[..., None], out)


def adjust_hue(img: np.ndarray, offset: float) -> np.ndarray:
    img = _check(img)
    if abs(offset) > 0.5:
        raise ValueError(f"hue offset {offset} outside [-0.5, 0.5]")
    if offset == 0:
        return img.copy()
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + offset) % 1.0
    return _clamp(hsv_to_rgb(hsv))


@dataclass(frozen=True)
class JitterConfig:
    brightness_max: float = 0.25
    contrast_range: tuple[float, float] = (0.5, 1.5)
    saturation_range: tuple[float, float] = (1.0, 3.0)
    hue_max: float = 0.25
    seed: int = 0
    # draw brightness and hue from [0, max) instead of [-max, max)
    one_sided: bool = False

    def __post_init__(self):
        vals = [self.brightness_max, self.hue_max, *self.contrast_range, *self.saturation_range]
        if not all(np.isfinite(vals)):
            raise InvariantError("jitter parameters must be finite")
        if not 0 <= self.brightness_max <= 1 or not 0 <= self.hue_max <= 0.5:
            raise InvariantError("brightness_max must be in [0, 1] and hue_max in [0, 0.5]")
        for name, (lo, hi) in (("contrast", self.contrast_range), ("saturation", self.saturation_range)):
            if not 0 < lo <= hi:
                raise InvariantError(f"{name} range must satisfy 0 < lo <= hi")

    def sample(self, rng: np.random.Generator) -> tuple[float, float, float, float]:
        """Draw (brightness delta, contrast, saturation, hue offset) in that order."""
        b_lo = 0.0 if self.one_sided else -self.brightness_max
        h_lo = 0.0 if self.one_sided else -self.hue_max
        return (
            float(rng.uniform(b_lo, self.brightness_max)),
            float(rng.uniform(*self.contrast_range)),
            float(rng.uniform(*self.saturation_range)),
            float(rng.uniform(h_lo, self.hue_max)),
        )


def apply_jitter(img: np.ndarray, params: tuple[float, float, float, float]) -> np.ndarray:
    brightness, contrast, saturation, hue = params
    out = adjust_brightness(img, brightness)
    out = adjust_contrast(out, contrast)
    out = adjust_saturation(out, saturation)
    return adjust_hue(out, hue)


def jitter(img: np.ndarray, cfg: JitterConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Brightness, contrast, saturation, hue with parameters from ``rng``.

    Without an explicit generator the draw comes from ``cfg.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    return apply_jitter(img, cfg.sample(rng))


def image_seed(seed: int, index: int) -> int:
    return int(seed) ^ int(index)


def jitter_corpus(images: Iterable[np.ndarray], cfg: JitterConfig) -> list[np.ndarray]:
    """Image ``i`` uses seed ``cfg.seed ^ i``, so any subset can be redone alone."""
    return [
        jitter(img, cfg, np.random.default_rng(image_seed(cfg.seed, i)))
        for i, img in enumerate(images)
    ]
