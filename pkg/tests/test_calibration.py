import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import FOUR_PIXELS, brute_force_ece, four_pixel_probmap, random_labels, random_probmap
from segcal.calibration import (
    CalibrationBins,
    accumulate_calibration,
    accumulate_pairs,
    bin_index,
    confidence_histogram,
    ece,
    merge_calibration,
    reliability_csv,
    reliability_data,
)
from segcal.errors import EmptyInputError, ShapeMismatchError


def pairs_bins(pairs, bins=10):
    conf = [c for c, _ in pairs]
    ok = [k for _, k in pairs]
    return accumulate_pairs(CalibrationBins.empty(bins), conf, ok)


def test_certain_pixel_lands_in_last_bin():
    b = accumulate_calibration(
        CalibrationBins.empty(10), np.array([[[1.0, 0.0]]], np.float32), np.array([[0]], np.uint8)
    )
    assert b.count[9] == 1 and b.sum_correct[9] == 1 and b.sum_conf[9] == 1.0
    assert b.total == 1


def test_hand_binning():
    b = accumulate_calibration(
        CalibrationBins.empty(10), np.array([[[0.55, 0.45]]], np.float32), np.array([[1]], np.uint8)
    )
    assert b.count[5] == 1 and b.sum_correct[5] == 0


def test_ignore_pixel_skipped():
    b = accumulate_calibration(
        CalibrationBins.empty(10), np.array([[[0.55, 0.45]]], np.float32), np.array([[255]], np.uint8)
    )
    assert b == CalibrationBins.empty(10)


def test_bin_edges_inclusive_on_the_right():
    c = np.array([0.0, 0.1, 0.1000001, 0.2, 0.3, 0.7, 1.0])
    assert bin_index(c, 10).tolist() == [0, 0, 1, 1, 2, 6, 9]


@settings(max_examples=300)
@given(st.floats(0.0, 1.0), st.integers(1, 40))
def test_bin_index_matches_edges(c, m):
    idx = int(bin_index(np.array([c]), m)[0])
    edges = CalibrationBins.empty(m).edges()
    assert edges[idx + 1] >= c
    assert edges[idx] < c or (idx == 0 and c == 0.0)


def test_four_pixel_fixture():
    b = pairs_bins(FOUR_PIXELS)
    assert abs(ece(b) - 42.5) <= 1e-9
    assert confidence_histogram(b) == [0, 0, 0, 0, 0, 1, 1, 0, 0, 2]


def test_four_pixel_reliability():
    rec = reliability_data(pairs_bins(FOUR_PIXELS))[9]
    assert rec.lo == 0.9 and rec.hi == 1.0
    assert rec.avg_conf == pytest.approx(0.95, abs=1e-15)
    assert rec.accuracy == 0.5 and rec.weight == 0.5


def test_four_pixel_through_float32_map():
    probs, gt = four_pixel_probmap()
    b = accumulate_calibration(CalibrationBins.empty(10), probs, gt)
    assert ece(b) == pytest.approx(42.5, abs=1e-5)


def test_perfect_predictions_zero():
    b = pairs_bins([(1.0, True)] * 7, 15)
    assert ece(b) == 0.0


def test_empty_errors_and_reliability():
    with pytest.raises(EmptyInputError):
        ece(CalibrationBins.empty())
    recs = reliability_data(CalibrationBins.empty(15))
    assert len(recs) == 15 and all(r.count == 0 and r.accuracy is None for r in recs)


def test_shape_and_bin_mismatch():
    with pytest.raises(ShapeMismatchError):
        accumulate_calibration(CalibrationBins.empty(), np.full((1, 2, 2), 0.5, np.float32), np.zeros((1, 3), np.uint8))
    with pytest.raises(ValueError):
        merge_calibration(CalibrationBins.empty(10), CalibrationBins.empty(15))


def test_single_bin_gap_formula():
    rng = np.random.default_rng(3)
    conf = rng.uniform(0.81, 0.86, 500)
    ok = rng.random(500) < 0.6
    b = accumulate_pairs(CalibrationBins.empty(10), conf, ok)
    assert ece(b) == pytest.approx(100 * abs(ok.mean() - conf.mean()), rel=1e-12)


def test_weights_sum_to_one():
    rng = np.random.default_rng(4)
    b = accumulate_calibration(CalibrationBins.empty(), random_probmap(rng, 9, 9, 4), random_labels(rng, 9, 9, 4))
    recs = reliability_data(b)
    assert sum(r.weight for r in recs) == pytest.approx(1.0, abs=1e-12)
    assert sum(r.count for r in recs) == b.total


def test_invariants_per_bin():
    rng = np.random.default_rng(5)
    b = accumulate_calibration(CalibrationBins.empty(), random_probmap(rng, 20, 20, 3), random_labels(rng, 20, 20, 3))
    edges = b.edges()
    assert np.all(b.sum_correct <= b.count)
    assert np.all(b.sum_conf >= b.count * edges[:-1])
    assert np.all(b.sum_conf <= b.count * edges[1:])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 2000), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_matches_brute_force(n, bins, seed):
    rng = np.random.default_rng(seed)
    conf = rng.random(n)
    conf[rng.random(n) < 0.1] = np.round(conf[:1] * bins) / bins  # hit edges too
    ok = rng.random(n) < conf
    got = ece(accumulate_pairs(CalibrationBins.empty(bins), conf, ok))
    want = brute_force_ece(list(zip(conf.tolist(), ok.tolist())), bins)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


def test_permutation_invariant():
    rng = np.random.default_rng(6)
    conf = rng.random(1000)
    ok = rng.random(1000) < 0.5
    perm = rng.permutation(1000)
    a = ece(accumulate_pairs(CalibrationBins.empty(), conf, ok))
    b = ece(accumulate_pairs(CalibrationBins.empty(), conf[perm], ok[perm]))
    assert a == pytest.approx(b, rel=1e-12)
    assert 0 <= a <= 100


def test_reliability_csv_columns():
    rows = list(csv.reader(io.StringIO(reliability_csv(reliability_data(pairs_bins(FOUR_PIXELS))))))
    assert rows[0] == ["bin_lo", "bin_hi", "avg_conf", "accuracy", "weight", "count"]
    assert len(rows) == 11
    assert rows[1][2] == "" and rows[10][5] == "2"
