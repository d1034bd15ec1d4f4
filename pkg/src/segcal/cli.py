"""``segcal`` command line: one subcommand per pipeline stage.

Every run prints a single JSON report (command, inputs, outputs, metrics,
wall_time) to stdout, or writes it to ``--report``. Exit status is 0 on
success, 1 on usage or validation errors and 2 on I/O errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from functools import reduce
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from segcal import augment, calibration, metrics, pseudo, selftrain, svg, synth, tensorio, toy
from segcal.ensemble import argmax_prediction, ensemble_average
from segcal.errors import ManifestError, MissingFileError, SegcalError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}")


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI: {text!r}")
    return vals[0], vals[1]


class Run:
    """Collects the pieces of a RunReport while a subcommand executes."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.metrics: dict = {}

    def read(self, *paths) -> None:
        self.inputs.extend(str(p) for p in paths)

    def wrote(self, path) -> None:
        self.outputs.append(str(path))

    def threads(self) -> int:
        n = self.args.threads
        if n is None:
            env = os.environ.get("SEGCAL_THREADS", "1")
            try:
                n = int(env)
            except ValueError:
                raise UsageError(f"SEGCAL_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise UsageError("thread count must be >= 1")
        return n

    def map_reduce(self, fn: Callable, items: Sequence, merge: Callable, initial):
        """Apply ``fn`` to every item and fold the results in item order."""
        with ThreadPoolExecutor(self.threads()) as pool:
            parts = list(pool.map(fn, items))
        return reduce(merge, parts, initial)


# ---------------------------------------------------------------------------
# manifest helpers


def _manifest(run: Run) -> tensorio.Manifest:
    if not run.args.manifest:
        raise UsageError("--manifest is required")
    m = tensorio.load_manifest(run.args.manifest, strict=run.args.strict)
    run.read(run.args.manifest)
    if not m.entries:
        raise ManifestError("manifest has no entries")
    return m


def _labels(m: tensorio.Manifest, e: tensorio.ManifestEntry) -> np.ndarray:
    if e.label_path is None:
        raise ManifestError(f"entry {e.id!r} has no label")
    return tensorio.read_labelmap(e.label_path, classes=m.classes)


def _members(m: tensorio.Manifest, e: tensorio.ManifestEntry) -> list[np.ndarray]:
    if not e.prob_paths:
        raise ManifestError(f"entry {e.id!r} has no probability maps")
    out = []
    for p in e.prob_paths:
        probs = tensorio.read_probmap(p)
        if probs.shape[-1] != m.classes:
            raise ManifestError(f"{p} has {probs.shape[-1]} classes, manifest says {m.classes}")
        out.append(probs)
    return out


def _fused(m, e) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble-averaged probabilities (or the single map) and ground truth."""
    probs = ensemble_average(_members(m, e))
    gt = _labels(m, e)
    tensorio.same_shape(probs, gt, f"entry {e.id!r} probabilities and labels")
    return probs, gt


def _manifest_inputs(run: Run, m: tensorio.Manifest) -> None:
    for e in m.entries:
        run.read(*([e.label_path] if e.label_path else []), *e.prob_paths)


def _write_text(run: Run, path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
    run.wrote(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_eval(run: Run) -> None:
    m = _manifest(run)
    _manifest_inputs(run, m)

    def one(e):
        probs, gt = _fused(m, e)
        return metrics.accumulate(metrics.ConfusionMatrix.zeros(m.classes), argmax_prediction(probs).labels, gt)

    cm = run.map_reduce(one, m.entries, metrics.merge, metrics.ConfusionMatrix.zeros(m.classes))
    report = metrics.MetricReport.from_matrix(cm)
    run.metrics = report.to_dict()
    if run.args.out:
        _write_text(run, run.args.out, report.to_csv())


def _calibration_pass(run: Run, m: tensorio.Manifest, bins: int):
    """Accumulators for the fused prediction and for each member separately."""

    def one(e):
        members = _members(m, e)
        gt = _labels(m, e)
        tensorio.same_shape(members[0], gt, f"entry {e.id!r} probabilities and labels")
        empty = calibration.CalibrationBins.empty(bins)
        fused = calibration.accumulate_calibration(empty, ensemble_average(members), gt)
        per_member = [calibration.accumulate_calibration(empty, p, gt) for p in members]
        return fused, per_member

    with ThreadPoolExecutor(run.threads()) as pool:
        parts = list(pool.map(one, m.entries))
    counts = {len(pm) for _, pm in parts}
    fused = reduce(calibration.merge_calibration, [f for f, _ in parts])
    if len(counts) != 1:
        return fused, None
    members = [
        reduce(calibration.merge_calibration, [pm[i] for _, pm in parts])
        for i in range(counts.pop())
    ]
    return fused, members


def cmd_ece(run: Run) -> None:
    m = _manifest(run)
    _manifest_inputs(run, m)
    fused, members = _calibration_pass(run, m, run.args.bins)
    run.metrics = {"ece": calibration.ece(fused), "bins": run.args.bins, "valid_pixels": fused.total}
    if members is not None and len(members) > 1:
        eces = [calibration.ece(b) for b in members]
        run.metrics.update(member_ece=eces, mean_member_ece=float(np.mean(eces)))


def cmd_reliability(run: Run) -> None:
    m = _manifest(run)
    _manifest_inputs(run, m)
    fused, _ = _calibration_pass(run, m, run.args.bins)
    records = calibration.reliability_data(fused)
    if run.args.out:
        _write_text(run, run.args.out, calibration.reliability_csv(records))
    if run.args.svg:
        _write_text(run, run.args.svg, svg.reliability_svg(records))
    run.metrics = {
        "ece": calibration.ece(fused),
        "bins": run.args.bins,
        "histogram": calibration.confidence_histogram(fused),
    }


def cmd_ensemble(run: Run) -> None:
    if not run.args.out:
        raise UsageError("--out is required")
    run.read(*run.args.inputs)
    members = [tensorio.read_probmap(p) for p in run.args.inputs]
    fused = ensemble_average(members)
    tensorio.write_probmap(fused, run.args.out)
    run.wrote(run.args.out)
    if run.args.confidence:
        conf = argmax_prediction(fused).confidence[..., None]
        tensorio.write_probmap(conf, run.args.confidence, validate=False)
        run.wrote(run.args.confidence)
    h, w, c = fused.shape
    run.metrics = {"members": len(members), "height": h, "width": w, "classes": c}


def cmd_sweep(run: Run) -> None:
    m = _manifest(run)
    _manifest_inputs(run, m)
    grid = run.args.thresholds

    def one(e):
        probs, gt = _fused(m, e)
        return pseudo.SweepCounts.empty(grid).add(argmax_prediction(probs), gt)

    counts = run.map_reduce(one, m.entries, lambda a, b: a + b, pseudo.SweepCounts.empty(grid))
    points = counts.points()
    if run.args.out:
        _write_text(run, run.args.out, pseudo.sweep_csv(points))
    if run.args.svg:
        _write_text(run, run.args.svg, svg.sweep_svg(points))
    run.metrics = {
        "points": [
            {"threshold": p.threshold, "precision": p.precision, "recall": p.recall,
             "coverage": p.coverage, "annotated": p.annotated,
             "correct": p.correct_annotated, "valid": p.valid}
            for p in points
        ]
    }


def cmd_pseudo(run: Run) -> None:
    m = _manifest(run)
    _manifest_inputs(run, m)
    if not run.args.out:
        raise UsageError("--out (output directory) is required")
    out = Path(run.args.out)
    out.mkdir(parents=True, exist_ok=True)
    quality = pseudo.PseudoQuality(0, 0, 0)
    annotated = total = 0
    for e in m.entries:
        ps = pseudo.make_pseudo_labels(
            argmax_prediction(ensemble_average(_members(m, e))), run.args.threshold
        )
        path = out / f"{e.id}.{run.args.format}"
        tensorio.write_labelmap(ps.labels, path)
        run.wrote(path)
        annotated += int(np.sum(ps.labels != tensorio.IGNORE_ID))
        total += ps.labels.size
        if e.label_path is not None:
            gt = _labels(m, e)
            quality = quality + pseudo.pseudo_quality(ps, gt)
    run.metrics = {"threshold": run.args.threshold, "coverage": annotated / total}
    if quality.valid:
        run.metrics.update(
            precision=quality.precision, coverage_vs_valid=quality.coverage_vs_valid
        )


def cmd_jitter(run: Run) -> None:
    if not run.args.out:
        raise UsageError("--out (output directory) is required")
    a = run.args
    cfg = augment.JitterConfig(
        brightness_max=a.brightness_max, contrast_range=a.contrast_range,
        saturation_range=a.saturation_range, hue_max=a.hue_max, seed=a.seed,
        one_sided=a.one_sided,
    )
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    params = []
    for i, src in enumerate(a.inputs):
        img = tensorio.read_ppm(src)
        run.read(src)
        draw = cfg.sample(np.random.default_rng(augment.image_seed(cfg.seed, i)))
        dst = out / Path(src).name
        tensorio.write_ppm(augment.apply_jitter(img, draw), dst)
        run.wrote(dst)
        params.append(dict(zip(("brightness", "contrast", "saturation", "hue"), draw)))
    run.metrics = {"images": len(params), "params": params}


def cmd_synth(run: Run) -> None:
    a = run.args
    if not a.out:
        raise UsageError("--out (output directory) is required")
    spec = synth.make_spec(
        a.classes, a.dim, layout=a.layout, separation=a.separation, shift=a.shift,
        region_scale=a.region_scale, seed=a.seed,
    )
    bench = synth.make_benchmark(spec, a.scenes, a.height, a.width, a.seed)
    root = Path(a.out)
    root.mkdir(parents=True, exist_ok=True)
    _write_text(run, root / "spec.json", spec.to_json() + "\n")
    for domain, scenes in (("source", bench.source), ("target", bench.target)):
        d = root / domain
        d.mkdir(exist_ok=True)
        entries = []
        for i, scene in enumerate(scenes):
            stem = f"{domain}_{i:04d}"
            feat, lab, post = d / f"{stem}.features.segp", d / f"{stem}.labels.pgm", d / f"{stem}.bayes.segp"
            tensorio.write_featuremap(scene.features, feat)
            tensorio.write_labelmap(scene.labels, lab)
            tensorio.write_probmap(synth.bayes_posterior(spec, scene.features, domain), post)
            run.outputs.extend(map(str, (feat, lab, post)))
            entries.append(tensorio.ManifestEntry(stem, lab, [post], feat))
        path = root / f"{domain}.json"
        tensorio.write_manifest(tensorio.Manifest(spec.classes, entries), path)
        run.wrote(path)
    run.metrics = {"classes": spec.classes, "dim": spec.dim, "scenes": a.scenes}


def _feature_data(run: Run, m: tensorio.Manifest, need_labels: bool):
    data = []
    for e in m.entries:
        if e.feature_path is None:
            raise ManifestError(f"entry {e.id!r} has no features")
        feats = tensorio.read_featuremap(e.feature_path)
        run.read(e.feature_path)
        labels = None
        if e.label_path is not None:
            labels = _labels(m, e)
            tensorio.same_shape(feats, labels, f"entry {e.id!r} features and labels")
            run.read(e.label_path)
        elif need_labels:
            raise ManifestError(f"entry {e.id!r} has no label")
        data.append((feats, labels))
    return data


def _train_config(a: argparse.Namespace) -> toy.TrainConfig:
    return toy.TrainConfig(
        steps=a.steps, batch_pixels=a.batch, lr0=a.lr0, power=a.power, seed=a.seed,
        finetune_steps=a.finetune_steps, finetune_lr0=a.finetune_lr0,
        feature_noise=a.feature_noise,
    )


def _save_model(run: Run, model: toy.ToyModel, trace) -> None:
    if run.args.out:
        model.save(run.args.out)
        run.wrote(run.args.out)
    if run.args.trace:
        _write_text(run, run.args.trace, toy.TrainResult(model, trace).trace_csv())


def cmd_train(run: Run) -> None:
    m = _manifest(run)
    data = _feature_data(run, m, need_labels=True)
    dim = data[0][0].shape[-1]
    init = toy.ToyModel.random(m.classes, dim, np.random.default_rng(run.args.seed))
    result = toy.train(init, data, _train_config(run.args))
    _save_model(run, result.model, result.trace)
    run.metrics = {
        "train_accuracy": toy.accuracy(result.model, data),
        "final_loss": result.trace[-1][2] if result.trace else None,
        "steps": len(result.trace),
    }


def cmd_selftrain(run: Run) -> None:
    a = run.args
    if a.demo:
        return _selftrain_demo(run)
    if not a.model:
        raise UsageError("--model is required unless --demo is given")
    model = toy.ToyModel.load(a.model)
    members = [toy.ToyModel.load(p) for p in a.ensemble]
    run.read(a.model, *a.ensemble)
    m = _manifest(run)
    data = _feature_data(run, m, need_labels=False)
    source = selftrain.ensemble_source(members) if members else selftrain.model_source(model)
    cfg = _train_config(a)
    result = selftrain.self_train(model, source, [f for f, _ in data], a.threshold, cfg)
    _save_model(run, result.model, result.trace)
    run.metrics = {"threshold": a.threshold, "coverage": result.coverage,
                   "finetune_steps": cfg.effective_finetune_steps}
    labeled = [(f, y) for f, y in data if y is not None]
    if labeled:
        run.metrics.update(
            accuracy_before=toy.accuracy(model, labeled),
            accuracy_after=toy.accuracy(result.model, labeled),
        )


def _selftrain_demo(run: Run) -> None:
    a = run.args
    cfg = selftrain.BenchmarkConfig(shift=a.shift, spec_seed=a.seed, threshold=a.threshold, bins=a.bins)
    bench = synth.make_benchmark(cfg.spec(), cfg.n_scenes, cfg.height, cfg.width, cfg.data_seed)
    runs = [selftrain.run_benchmark(cfg, s, bench) for s in range(a.runs)]
    keys = ("source_acc", "target_acc", "own_finetune_acc", "ensemble_finetune_acc",
            "ensemble_ece", "mean_member_ece")
    run.metrics = {
        "runs": [r.as_dict() for r in runs],
        "mean": {k: float(np.mean([getattr(r, k) for r in runs])) for k in keys},
    }


def cmd_gradcheck(run: Run) -> None:
    rng = np.random.default_rng(run.args.seed)
    errors = []
    for _ in range(run.args.instances):
        c, d = int(rng.integers(2, 6)), int(rng.integers(1, 9))
        model = toy.ToyModel(rng.normal(0, 1, (c, d)), rng.normal(0, 1, c))
        feats = rng.normal(0, 1, (4, 4, d))
        labels = rng.integers(0, c, (4, 4)).astype(np.uint8)
        errors.append(toy.gradient_check(model, feats, labels, run.args.h))
    run.metrics = {"instances": len(errors), "h": run.args.h, "max_rel_error": max(errors)}


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for accumulation (default $SEGCAL_THREADS or 1)")
    common.add_argument("--strict", action="store_true",
                        help="check every manifest raster header up front")
    common.add_argument("--report", help="write the JSON run report here instead of stdout")

    manifest = _Parser(add_help=False)
    manifest.add_argument("--manifest", help="JSON dataset manifest")

    binned = _Parser(add_help=False)
    binned.add_argument("--bins", type=int, default=calibration.DEFAULT_BINS,
                        help="number of confidence bins (default 15)")

    threshold = _Parser(add_help=False)
    threshold.add_argument("--threshold", type=float, default=pseudo.DEFAULT_THRESHOLD,
                           help="pseudo-label confidence threshold (default 0.9)")

    training = _Parser(add_help=False)
    training.add_argument("--steps", type=int, default=2000)
    training.add_argument("--batch", type=int, default=256, help="pixels per minibatch")
    training.add_argument("--lr0", type=float, default=0.01, help="initial learning rate")
    training.add_argument("--power", type=float, default=0.9, help="polynomial decay power")
    training.add_argument("--finetune-steps", type=int, default=None,
                          help="fine-tuning steps (default steps/4)")
    training.add_argument("--finetune-lr0", type=float, default=None,
                          help="fine-tuning learning rate (default --lr0)")
    training.add_argument("--feature-noise", type=float, default=0.0,
                          help="stddev of Gaussian noise added to training features")
    training.add_argument("--out", help="model checkpoint (JSON)")
    training.add_argument("--trace", help="loss trace CSV")

    parser = _Parser(prog="segcal", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, parents, help_):
        p = sub.add_parser(name, parents=[common, *parents], help=help_, description=help_)
        p.set_defaults(func=fn)
        return p

    p = add("eval", cmd_eval, [manifest], "mIoU, per-class IoU and pixel accuracy")
    p.add_argument("--out", help="one-row CSV report")

    add("ece", cmd_ece, [manifest, binned], "expected calibration error (percent)")

    p = add("reliability", cmd_reliability, [manifest, binned], "reliability diagram data")
    p.add_argument("--out", help="CSV of per-bin records")
    p.add_argument("--svg", help="SVG chart")

    p = add("ensemble", cmd_ensemble, [], "average SEGP probability maps")
    p.add_argument("inputs", nargs="+", help="member SEGP files")
    p.add_argument("--out", help="fused SEGP file")
    p.add_argument("--confidence", help="also write the max-probability raster (SEGP, C=1)")

    p = add("sweep", cmd_sweep, [manifest], "precision, recall and coverage over thresholds")
    p.add_argument("--thresholds", type=_floats, default=list(pseudo.DEFAULT_GRID),
                   help="comma-separated increasing thresholds in (0, 1]")
    p.add_argument("--out", help="sweep CSV")
    p.add_argument("--svg", help="SVG chart")

    p = add("pseudo", cmd_pseudo, [manifest, threshold], "write hard pseudo-labels")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("pgm", "segl"), default="pgm")

    p = add("jitter", cmd_jitter, [], "color-jitter PPM images")
    p.add_argument("inputs", nargs="+", help="P6 PPM files")
    p.add_argument("--out", help="output directory")
    p.add_argument("--brightness-max", type=float, default=0.25)
    p.add_argument("--contrast-range", type=_pair, default=(0.5, 1.5), metavar="LO,HI")
    p.add_argument("--saturation-range", type=_pair, default=(1.0, 3.0), metavar="LO,HI")
    p.add_argument("--hue-max", type=float, default=0.25)
    p.add_argument("--one-sided", action="store_true",
                   help="draw brightness and hue from [0, max) instead of [-max, max)")

    p = add("synth", cmd_synth, [], "generate a synthetic domain-shift dataset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--scenes", type=int, default=20, help="scenes per domain")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--layout", choices=("chain", "random"), default="chain")
    p.add_argument("--separation", type=float, default=4.0, help="class spacing in stddevs")
    p.add_argument("--shift", type=float, default=1.0, help="target mean shift in stddevs")
    p.add_argument("--region-scale", type=float, default=8.0)

    add("train", cmd_train, [manifest, training], "train the toy classifier on features")

    p = add("selftrain", cmd_selftrain, [manifest, threshold, training, binned],
            "fine-tune on pseudo-labels, or run the benchmark with --demo")
    p.add_argument("--model", help="source model checkpoint")
    p.add_argument("--ensemble", nargs="*", default=[],
                   help="checkpoints whose averaged predictions make the pseudo-labels")
    p.add_argument("--demo", action="store_true", help="run the synthetic benchmark")
    p.add_argument("--runs", type=int, default=5, help="training seeds for --demo")
    p.add_argument("--shift", type=float, default=1.0, help="target shift for --demo")

    p = add("gradcheck", cmd_gradcheck, [], "finite-difference check of the loss gradient")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--h", type=float, default=1e-6, help="finite-difference step")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    state = Run(args)
    start = time.perf_counter()
    try:
        args.func(state)
    except (MissingFileError, OSError) as exc:
        print(f"segcal: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SegcalError, UsageError, ValueError) as exc:
        print(f"segcal: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    report = {
        "command": args.command,
        "inputs": state.inputs,
        "outputs": state.outputs,
        "metrics": state.metrics,
        "wall_time": time.perf_counter() - start,
    }
    text = json.dumps(report, indent=2) + "\n"
    if args.report:
        try:
            Path(args.report).write_text(text, encoding="utf-8")
        except OSError as exc:
            print(f"segcal: I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
