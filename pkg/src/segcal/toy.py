"""Linear softmax pixel classifier trained with cross-entropy and poly decay.

Stands in for a segmentation network at desk scale: logits are
``z = W x + b`` per pixel, probabilities their softmax, and training is
plain minibatch SGD with learning rate ``lr0 * (1 - step/steps) ** power``.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from segcal.errors import EmptyInputError, InvariantError, ShapeMismatchError
from segcal.tensorio import IGNORE_ID

LOG_FLOOR = 1e-12


@dataclass
class ToyModel:
    weights: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatchError(
                f"weights {self.weights.shape} and bias {self.bias.shape} disagree"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise InvariantError("model parameters must be finite")

    @classmethod
    def zeros(cls, classes: int, dim: int) -> "ToyModel":
        return cls(np.zeros((classes, dim)), np.zeros(classes))

    @classmethod
    def random(cls, classes: int, dim: int, rng: np.random.Generator, scale: float = 0.01):
        return cls(rng.normal(0.0, scale, (classes, dim)), np.zeros(classes))

    @property
    def classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ToyModel":
        return ToyModel(self.weights.copy(), self.bias.copy())

    def to_json(self) -> str:
        return json.dumps({
            "classes": self.classes,
            "dim": self.dim,
            "weights": self.weights.ravel().tolist(),
            "bias": self.bias.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "ToyModel":
        doc = json.loads(text)
        c, d = int(doc["classes"]), int(doc["dim"])
        w = np.asarray(doc["weights"], dtype=np.float64)
        if w.size != c * d:
            raise ShapeMismatchError(f"checkpoint has {w.size} weights, expected {c * d}")
        return cls(w.reshape(c, d), np.asarray(doc["bias"], dtype=np.float64))

    def save(self, path: Union[str, os.PathLike]) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "ToyModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: ToyModel, x: np.ndarray) -> np.ndarray:
    """float64 probabilities for features of shape (..., d)."""
    if x.shape[-1] != model.dim:
        raise ShapeMismatchError(f"features have dim {x.shape[-1]}, model expects {model.dim}")
    return softmax(np.asarray(x, dtype=np.float64) @ model.weights.T + model.bias)


def forward(model: ToyModel, features: np.ndarray) -> np.ndarray:
    """(H, W, d) features to an (H, W, C) float32 probability map."""
    return predict_proba(model, features).astype(np.float32)


def _valid(labels: np.ndarray) -> np.ndarray:
    valid = labels != IGNORE_ID
    if not valid.any():
        raise EmptyInputError("no valid (non-ignore) pixels")
    return valid


def ce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean of ``-log p(true class)`` over non-ignore pixels."""
    if probs.shape[:-1] != labels.shape:
        raise ShapeMismatchError(f"probabilities {probs.shape} vs labels {labels.shape}")
    valid = _valid(labels)
    p = np.asarray(probs, dtype=np.float64)[valid]
    y = labels[valid].astype(np.intp)
    true_p = p[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(true_p, LOG_FLOOR))))


def ce_gradient(
    model: ToyModel, features: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient (dW, db) of the mean cross-entropy over non-ignore pixels."""
    if features.shape[:-1] != labels.shape:
        raise ShapeMismatchError(f"features {features.shape} vs labels {labels.shape}")
    valid = _valid(labels)
    x = np.asarray(features, dtype=np.float64)[valid]
    y = labels[valid].astype(np.intp)
    if np.any(y >= model.classes):
        raise InvariantError(f"label id >= {model.classes} in training data")
    return _grad(model, x, y)


def _grad(model: ToyModel, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _loss_and_grad(model, x, y)[1:]


def _loss_and_grad(model: ToyModel, x: np.ndarray, y: np.ndarray):
    dz = predict_proba(model, x)
    rows = np.arange(len(y))
    loss = float(-np.mean(np.log(np.maximum(dz[rows, y], LOG_FLOOR))))
    dz[rows, y] -= 1.0
    dz /= len(y)
    return loss, dz.T @ x, dz.sum(axis=0)


def _loss(model: ToyModel, x: np.ndarray, y: np.ndarray) -> float:
    p = predict_proba(model, x)[np.arange(len(y)), y]
    return float(-np.mean(np.log(np.maximum(p, LOG_FLOOR))))


def poly_lr(step: int, total_steps: int, lr0: float = 0.01, power: float = 0.9) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * (1.0 - step / total_steps) ** power


def gradient_check(
    model: ToyModel, features: np.ndarray, labels: np.ndarray, h: float = 1e-6
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per parameter is ``|a - n| / max(|a|, |n|, 1e-8)``; the
    floor keeps parameters with a vanishing gradient from dominating.
    Large ``h`` (say 0.1) degrades the estimate; that is expected.
    """
    dw, db = ce_gradient(model, features, labels)
    valid = _valid(labels)
    x = np.asarray(features, dtype=np.float64)[valid]
    y = labels[valid].astype(np.intp)
    probe = model.copy()
    worst = 0.0
    for param, analytic in ((probe.weights, dw), (probe.bias, db)):
        flat = param.reshape(-1)
        for i, a in enumerate(analytic.reshape(-1)):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss(probe, x, y)
            flat[i] = orig - h
            down = _loss(probe, x, y)
            flat[i] = orig
            num = (up - down) / (2 * h)
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), 1e-8))
    return worst


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_pixels: int = 256
    lr0: float = 0.01
    power: float = 0.9
    seed: int = 0
    finetune_steps: Optional[int] = None
    finetune_lr0: Optional[float] = None
    # stddev of Gaussian noise added to training features; scalar or per-dimension
    feature_noise: Union[float, Sequence[float]] = 0.0
    # dimensions the model may use; the others are zeroed in training and get zero weight
    feature_mask: Optional[Sequence[bool]] = None

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_pixels < 1:
            raise ValueError("batch_pixels must be >= 1")
        if not (self.lr0 > 0 and self.power > 0):
            raise ValueError("lr0 and power must be positive")

    @property
    def effective_finetune_steps(self) -> int:
        return self.finetune_steps if self.finetune_steps is not None else self.steps // 4

    def for_finetune(self) -> "TrainConfig":
        return replace(
            self,
            steps=self.effective_finetune_steps,
            lr0=self.finetune_lr0 if self.finetune_lr0 is not None else self.lr0,
        )


@dataclass
class TrainResult:
    model: ToyModel
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "lr", "loss"])
        for step, lr, loss in self.trace:
            w.writerow([step, repr(lr), repr(loss)])
        return buf.getvalue()


def pixel_pool(
    data: Sequence[tuple[np.ndarray, np.ndarray]],
) -> tuple[np.ndarray, np.ndarray]:
    """Stack the non-ignore pixels of (features, labels) pairs."""
    xs, ys = [], []
    for features, labels in data:
        if features.shape[:-1] != labels.shape:
            raise ShapeMismatchError(f"features {features.shape} vs labels {labels.shape}")
        keep = labels != IGNORE_ID
        xs.append(np.asarray(features, dtype=np.float64)[keep])
        ys.append(labels[keep].astype(np.intp))
    if not xs or sum(len(y) for y in ys) == 0:
        raise EmptyInputError("empty valid-pixel pool")
    return np.concatenate(xs), np.concatenate(ys)


def train(
    model: ToyModel,
    data: Sequence[tuple[np.ndarray, np.ndarray]],
    cfg: TrainConfig,
) -> TrainResult:
    """Minibatch SGD from ``model`` (left untouched) for ``cfg.steps`` steps."""
    x, y = pixel_pool(data)
    if x.shape[1] != model.dim:
        raise ShapeMismatchError(f"features have dim {x.shape[1]}, model expects {model.dim}")
    if np.any(y >= model.classes):
        raise InvariantError(f"label id >= {model.classes} in training data")
    noise = np.broadcast_to(np.asarray(cfg.feature_noise, dtype=np.float64), (model.dim,))
    rng = np.random.default_rng(cfg.seed)
    out = model.copy()
    if cfg.feature_mask is not None:
        mask = np.asarray(cfg.feature_mask, dtype=bool)
        if mask.shape != (model.dim,):
            raise ShapeMismatchError(f"feature mask has shape {mask.shape}, expected ({model.dim},)")
        x = x * mask
        noise = noise * mask
        out.weights[:, ~mask] = 0.0
    trace = []
    for step in range(cfg.steps):
        idx = rng.integers(0, len(y), cfg.batch_pixels)
        xb, yb = x[idx], y[idx]
        if noise.any():
            xb = xb + rng.standard_normal(xb.shape) * noise
        loss, dw, db = _loss_and_grad(out, xb, yb)
        lr = poly_lr(step, cfg.steps, cfg.lr0, cfg.power)
        out.weights -= lr * dw
        out.bias -= lr * db
        trace.append((step, lr, loss))
    return TrainResult(out, trace)


def accuracy(model: ToyModel, data: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Pixel accuracy over the non-ignore pixels of ``data``."""
    x, y = pixel_pool(data)
    pred = np.argmax(predict_proba(model, x), axis=1)
    return float(np.mean(pred == y))
