from dataclasses import replace

import numpy as np
import pytest

from segcal import synth
from segcal.errors import EmptyInputError
from segcal.selftrain import (
    BenchmarkConfig,
    ensemble_source,
    model_source,
    self_train,
    train_ensemble,
)
from segcal.toy import ToyModel, TrainConfig, accuracy, forward, train


@pytest.fixture(scope="module")
def small_bench():
    spec = synth.make_spec(3, 4, separation=4.0, shift=1.0, seed=2)
    return synth.make_benchmark(spec, 4, 32, 32, 11)


def test_threshold_one_has_nothing_to_train(small_bench):
    model = ToyModel.zeros(3, 4)
    feats = [s.features for s in small_bench.target]
    with pytest.raises(EmptyInputError):
        self_train(model, model_source(model), feats, 1.0, TrainConfig(steps=4))
    with pytest.raises(ValueError):
        self_train(model, model_source(model), feats, 0.0, TrainConfig(steps=4))


def test_ensemble_source_is_average(small_bench):
    rng = np.random.default_rng(0)
    models = [ToyModel.random(3, 4, rng, scale=1.0) for _ in range(3)]
    x = small_bench.target[0].features
    fused = ensemble_source(models)(x)
    np.testing.assert_allclose(fused, np.mean([forward(m, x) for m in models], axis=0), atol=1e-6)
    with pytest.raises(EmptyInputError):
        ensemble_source([])


def test_train_ensemble_members_differ_and_repeat(small_bench):
    data = synth.scene_pairs(small_bench.source)
    cfg = TrainConfig(steps=50, lr0=0.5, seed=3)
    a = train_ensemble(data, 3, cfg, (0.0, 0.5))
    b = train_ensemble(data, 3, cfg, (0.0, 0.5))
    assert len(a) == 2
    assert not np.array_equal(a[0].weights, a[1].weights)
    assert all(x.weights.tobytes() == y.weights.tobytes() for x, y in zip(a, b))


def test_self_train_deterministic_and_fresh_schedule(small_bench):
    src, tgt = synth.scene_pairs(small_bench.source), synth.scene_pairs(small_bench.target)
    cfg = TrainConfig(steps=400, lr0=0.5, seed=1)
    base = train(ToyModel.zeros(3, 4), src, cfg).model
    feats = [f for f, _ in tgt]
    a = self_train(base, model_source(base), feats, 0.9, cfg)
    b = self_train(base, model_source(base), feats, 0.9, cfg)
    assert a.model.weights.tobytes() == b.model.weights.tobytes()
    assert len(a.trace) == 100 and a.trace[0][1] == 0.5
    assert 0 < a.coverage < 1
    for ps in a.pseudo_labels:
        assert set(np.unique(ps.labels)) <= {0, 1, 2, 255}


def test_identical_domains_within_one_point():
    cfg = BenchmarkConfig(shift=0.0)
    bench = synth.make_benchmark(cfg.spec(), cfg.n_scenes, cfg.height, cfg.width, cfg.data_seed)
    src, tgt = synth.scene_pairs(bench.source), synth.scene_pairs(bench.target)
    feats = [f for f, _ in tgt]
    deltas = []
    for seed in range(5):
        tcfg = replace(cfg.train, seed=seed, finetune_steps=1000)
        model = train(ToyModel.random(5, 8, np.random.default_rng(seed)), src, tcfg).model
        tuned = self_train(model, model_source(model), feats, 0.9, tcfg).model
        deltas.append(accuracy(tuned, tgt) - accuracy(model, tgt))
    assert abs(np.mean(deltas)) <= 0.01


def test_shifted_target_improves():
    cfg = BenchmarkConfig()
    bench = synth.make_benchmark(cfg.spec(), cfg.n_scenes, cfg.height, cfg.width, cfg.data_seed)
    src, tgt = synth.scene_pairs(bench.source), synth.scene_pairs(bench.target)
    tcfg = replace(cfg.train, finetune_steps=1000)
    model = train(ToyModel.random(5, 8, np.random.default_rng(0)), src, tcfg).model
    tuned = self_train(model, model_source(model), [f for f, _ in tgt], 0.9, tcfg).model
    assert accuracy(tuned, tgt) > accuracy(model, tgt)
