"""Two-stage self-training and toy deep ensembles.

Stage one runs a probability source (one model or an averaged ensemble)
over unlabeled target features and keeps confident pixels as hard
pseudo-labels; stage two fine-tunes a copy of the source model on them
with a fresh polynomial schedule.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from segcal import calibration, synth
from segcal.ensemble import argmax_prediction, ensemble_average
from segcal.errors import EmptyInputError
from segcal.pseudo import DEFAULT_THRESHOLD, PseudoLabelSet, make_pseudo_labels
from segcal.toy import ToyModel, TrainConfig, accuracy, forward, train

ProbSource = Callable[[np.ndarray], np.ndarray]


def model_source(model: ToyModel) -> ProbSource:
    return lambda features: forward(model, features)


def ensemble_source(models: Sequence[ToyModel]) -> ProbSource:
    """Arithmetic mean of the members' probability maps."""
    if not models:
        raise EmptyInputError("ensemble needs at least one member")
    return lambda features: ensemble_average([forward(m, features) for m in models])


@dataclass
class SelfTrainResult:
    model: ToyModel
    trace: list
    pseudo_labels: list[PseudoLabelSet]

    @property
    def coverage(self) -> float:
        total = sum(p.labels.size for p in self.pseudo_labels)
        return sum(p.coverage * p.labels.size for p in self.pseudo_labels) / total


def self_train(
    source_model: ToyModel,
    pseudo_source: ProbSource,
    target_features: Sequence[np.ndarray],
    threshold: float,
    cfg: TrainConfig,
) -> SelfTrainResult:
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold {threshold} outside (0, 1]")
    pseudo = [
        make_pseudo_labels(argmax_prediction(pseudo_source(f)), threshold)
        for f in target_features
    ]
    if all(p.coverage == 0 for p in pseudo):
        raise EmptyInputError(f"no target pixel reaches confidence {threshold}")
    result = train(
        source_model,
        [(f, p.labels) for f, p in zip(target_features, pseudo)],
        cfg.for_finetune(),
    )
    return SelfTrainResult(result.model, result.trace, pseudo)


DEFAULT_MEMBER_NOISE = (0.75, 0.0, 0.25, 0.5, 1.0)


def train_ensemble(
    data: Sequence[tuple[np.ndarray, np.ndarray]],
    classes: int,
    cfg: TrainConfig,
    noise_levels: Sequence[float] = DEFAULT_MEMBER_NOISE,
) -> list[ToyModel]:
    """One member per entry of ``noise_levels``.

    Every member gets its own seed (derived from ``cfg.seed``) for the
    random init and minibatch stream, and trains with its own feature-noise
    augmentation strength.
    """
    dim = data[0][0].shape[-1]
    seeds = np.random.SeedSequence(cfg.seed).generate_state(len(noise_levels), dtype=np.uint64)
    members = []
    for noise, s in zip(noise_levels, seeds):
        init = ToyModel.random(classes, dim, np.random.default_rng(int(s)))
        members.append(train(init, data, replace(cfg, seed=int(s), feature_noise=noise)).model)
    return members


def target_ece(source: ProbSource, data: Sequence[tuple[np.ndarray, np.ndarray]], bins: int) -> float:
    acc = calibration.CalibrationBins.empty(bins)
    for features, labels in data:
        acc = calibration.accumulate_calibration(acc, source(features), labels)
    return calibration.ece(acc)


@dataclass(frozen=True)
class BenchmarkConfig:
    """Desk-scale domain-adaptation benchmark.

    The default toy learning rate (0.5) is far above the 0.01 a deep
    network uses: a linear model on unit-scale features needs it to
    converge within a few thousand steps.
    """

    classes: int = 5
    dim: int = 8
    layout: str = "chain"
    separation: float = 4.0
    shift: float = 1.0
    n_scenes: int = 20
    height: int = 64
    width: int = 64
    spec_seed: int = 0
    data_seed: int = 123
    threshold: float = DEFAULT_THRESHOLD
    bins: int = calibration.DEFAULT_BINS
    member_noise: tuple = DEFAULT_MEMBER_NOISE
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=4000, lr0=0.5))

    def spec(self) -> synth.DomainSpec:
        return synth.make_spec(
            self.classes, self.dim, layout=self.layout, separation=self.separation,
            shift=self.shift, seed=self.spec_seed,
        )


@dataclass
class BenchmarkRun:
    seed: int
    source_acc: float  # base model, source scenes
    target_acc: float  # base model, target scenes
    own_finetune_acc: float
    ensemble_finetune_acc: float
    own_coverage: float
    ensemble_coverage: float
    ensemble_acc: float
    ensemble_ece: float
    member_eces: list[float]

    @property
    def mean_member_ece(self) -> float:
        return float(np.mean(self.member_eces))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["mean_member_ece"] = self.mean_member_ece
        return d


def run_benchmark(cfg: BenchmarkConfig, seed: int, bench: synth.Benchmark | None = None) -> BenchmarkRun:
    """Source training, own vs. ensemble pseudo-label fine-tuning, target ECE.

    The base model is ensemble member 0, so it is compared against an
    ensemble it belongs to.
    """
    if bench is None:
        bench = synth.make_benchmark(cfg.spec(), cfg.n_scenes, cfg.height, cfg.width, cfg.data_seed)
    src = synth.scene_pairs(bench.source)
    tgt = synth.scene_pairs(bench.target)
    target_features = [f for f, _ in tgt]
    tcfg = replace(cfg.train, seed=seed)

    members = train_ensemble(src, cfg.classes, tcfg, cfg.member_noise)
    base = members[0]
    ens = ensemble_source(members)
    own = self_train(base, model_source(base), target_features, cfg.threshold, tcfg)
    fused = self_train(base, ens, target_features, cfg.threshold, tcfg)
    return BenchmarkRun(
        seed=seed,
        source_acc=accuracy(base, src),
        target_acc=accuracy(base, tgt),
        own_finetune_acc=accuracy(own.model, tgt),
        ensemble_finetune_acc=accuracy(fused.model, tgt),
        own_coverage=own.coverage,
        ensemble_coverage=fused.coverage,
        ensemble_acc=_source_accuracy(ens, tgt),
        ensemble_ece=target_ece(ens, tgt, cfg.bins),
        member_eces=[target_ece(model_source(m), tgt, cfg.bins) for m in members],
    )


def _source_accuracy(source: ProbSource, data) -> float:
    correct = total = 0
    for features, labels in data:
        pred = argmax_prediction(source(features)).labels
        valid = labels != 255
        correct += int(np.sum(pred[valid] == labels[valid]))
        total += int(valid.sum())
    return correct / total
