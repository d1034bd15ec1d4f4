"""Synthetic domain-shift scenes and their exact Bayes posterior.

A scene is a Voronoi partition of the image plane whose cells get class
ids drawn from the class priors; each pixel's feature vector is drawn from
its class's axis-aligned Gaussian. The target domain adds ``shift`` to
every class mean (and optionally rescales the standard deviations).
Because labels and features follow exactly this generative process,
:func:`bayes_posterior` is calibrated by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.spatial import cKDTree

from segcal.errors import DimensionError, InvariantError, ShapeMismatchError

Domain = Literal["source", "target"]


@dataclass(frozen=True)
class DomainSpec:
    class_means: np.ndarray  # (C, d)
    class_stddev: np.ndarray  # (C, d)
    class_priors: np.ndarray  # (C,)
    shift: np.ndarray  # (d,)
    region_scale: float = 8.0
    target_scale: float = 1.0  # multiplies every stddev in the target domain

    def __post_init__(self):
        for name in ("class_means", "class_stddev", "class_priors", "shift"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        c, d = self.class_means.shape
        if self.class_stddev.shape != (c, d):
            raise ShapeMismatchError("class_stddev must match class_means")
        if self.class_priors.shape != (c,) or self.shift.shape != (d,):
            raise ShapeMismatchError("priors must be (C,) and shift (d,)")
        if np.any(self.class_stddev <= 0) or self.target_scale <= 0:
            raise InvariantError("standard deviations must be positive")
        if np.any(self.class_priors < 0) or abs(self.class_priors.sum() - 1.0) > 1e-9:
            raise InvariantError("class priors must be non-negative and sum to 1")
        if self.region_scale <= 0:
            raise InvariantError("region_scale must be positive")

    @property
    def classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    def means(self, domain: Domain) -> np.ndarray:
        return self.class_means + self.shift if domain == "target" else self.class_means

    def stddev(self, domain: Domain) -> np.ndarray:
        return self.class_stddev * self.target_scale if domain == "target" else self.class_stddev

    def with_shift(self, shift: np.ndarray) -> "DomainSpec":
        return DomainSpec(
            self.class_means, self.class_stddev, self.class_priors, shift,
            self.region_scale, self.target_scale,
        )

    def to_json(self) -> str:
        return json.dumps({
            "class_means": self.class_means.tolist(),
            "class_stddev": self.class_stddev.tolist(),
            "class_priors": self.class_priors.tolist(),
            "shift": self.shift.tolist(),
            "region_scale": self.region_scale,
            "target_scale": self.target_scale,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DomainSpec":
        return cls(**json.loads(text))


def make_spec(
    classes: int = 5,
    dim: int = 8,
    *,
    layout: Literal["chain", "random"] = "chain",
    separation: float = 4.0,
    sigma: float = 1.0,
    shift: float = 1.0,
    region_scale: float = 8.0,
    seed: int = 0,
) -> DomainSpec:
    """Isotropic-Gaussian spec whose target domain is shifted by ``shift * sigma``.

    ``layout="chain"`` puts the class means on a line through the origin,
    ``separation * sigma`` apart, and shifts the target along that same
    line, so every class drifts toward its neighbour. ``layout="random"``
    draws means as ``separation * sigma`` times standard normal vectors and
    shifts along an independent random direction. Priors are uniform.
    """
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    if layout == "chain":
        means = np.outer(np.arange(classes) - (classes - 1) / 2, direction) * separation * sigma
    elif layout == "random":
        means = rng.standard_normal((classes, dim)) * separation * sigma
        direction = rng.standard_normal(dim)
        direction /= np.linalg.norm(direction)
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return DomainSpec(
        means,
        np.full((classes, dim), sigma),
        np.full(classes, 1.0 / classes),
        direction * shift * sigma,
        region_scale,
    )


@dataclass
class Scene:
    features: np.ndarray  # (H, W, d) float32
    labels: np.ndarray  # (H, W) uint8


def _voronoi_labels(spec: DomainSpec, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    n_sites = max(1, int(round(h * w / spec.region_scale**2)))
    sites = rng.uniform(0.0, 1.0, (n_sites, 2)) * (h, w)
    site_class = rng.choice(spec.classes, size=n_sites, p=spec.class_priors)
    yy, xx = np.mgrid[0:h, 0:w]
    grid = np.column_stack([yy.ravel() + 0.5, xx.ravel() + 0.5])
    _, nearest = cKDTree(sites).query(grid)
    return site_class[nearest].reshape(h, w).astype(np.uint8)


def generate_scene(spec: DomainSpec, height: int, width: int, domain: Domain, seed) -> Scene:
    """Deterministic scene; the same seed gives the same layout in both domains."""
    if height <= 0 or width <= 0:
        raise DimensionError(f"scene size {height}x{width}")
    if domain not in ("source", "target"):
        raise ValueError(f"unknown domain {domain!r}")
    rng = np.random.default_rng(seed)
    labels = _voronoi_labels(spec, height, width, rng)
    noise = rng.standard_normal((height, width, spec.dim))
    features = spec.means(domain)[labels] + noise * spec.stddev(domain)[labels]
    return Scene(features.astype(np.float32), labels)


def log_posterior(spec: DomainSpec, features: np.ndarray, domain: Domain) -> np.ndarray:
    """Normalized float64 log p(c | x) for features of shape (..., d)."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != spec.dim:
        raise ShapeMismatchError(f"features have dim {x.shape[-1]}, spec has {spec.dim}")
    mu, sd = spec.means(domain), spec.stddev(domain)
    z = (x[..., None, :] - mu) / sd
    with np.errstate(divide="ignore"):
        log_prior = np.log(spec.class_priors)
    logp = log_prior - np.log(sd).sum(axis=-1) - 0.5 * np.einsum("...cd,...cd->...c", z, z)
    top = logp.max(axis=-1, keepdims=True)
    return logp - (top + np.log(np.exp(logp - top).sum(axis=-1, keepdims=True)))


def bayes_posterior(spec: DomainSpec, features: np.ndarray, domain: Domain) -> np.ndarray:
    """Exact class posterior as an (H, W, C) float32 probability map."""
    return np.exp(log_posterior(spec, features, domain)).astype(np.float32)


@dataclass
class Benchmark:
    source: list[Scene]
    target: list[Scene]


def scene_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)]


def make_benchmark(spec: DomainSpec, n_scenes: int, height: int, width: int, seed: int) -> Benchmark:
    """``n_scenes`` independent source and target scenes with derived seeds."""
    if n_scenes <= 0:
        raise ValueError("n_scenes must be >= 1")
    seeds = scene_seeds(seed, 2 * n_scenes)
    return Benchmark(
        [generate_scene(spec, height, width, "source", s) for s in seeds[:n_scenes]],
        [generate_scene(spec, height, width, "target", s) for s in seeds[n_scenes:]],
    )


def scene_pairs(scenes: Sequence[Scene]) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(s.features, s.labels) for s in scenes]
