import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segcal.errors import EmptyInputError, InvariantError, ShapeMismatchError
from segcal.metrics import (
    ConfusionMatrix,
    MetricReport,
    accumulate,
    iou_per_class,
    merge,
    miou,
    pixel_accuracy,
)

GT = np.array([[0, 0, 1, 1]], np.uint8)
PRED = np.array([[0, 1, 1, 1]], np.uint8)


def cm_of(pred, gt, classes=2):
    return accumulate(ConfusionMatrix.zeros(classes), pred, gt)


def test_ignore_excluded():
    cm = cm_of(np.array([[0, 1]]), np.array([[0, 255]]))
    assert cm.counts.tolist() == [[1, 0], [0, 0]] and cm.total == 1


def test_hand_example_counts():
    cm = cm_of(PRED, GT)
    assert cm.counts.dtype == np.uint64
    assert cm.counts.tolist() == [[1, 1], [0, 2]]


def test_hand_example_metrics():
    cm = cm_of(PRED, GT)
    iou = iou_per_class(cm)
    assert iou[0] == 0.5 and iou[1] == 2 / 3
    assert abs(miou(cm) - 0.5833333333333334) <= 1e-12
    assert pixel_accuracy(cm) == 0.75


def test_empty_accumulation_is_zero():
    cm = ConfusionMatrix.zeros(3)
    assert not cm.counts.any()
    with pytest.raises(EmptyInputError):
        pixel_accuracy(cm)
    with pytest.raises(EmptyInputError):
        miou(cm)


def test_perfect_and_all_wrong():
    gt = np.array([[0, 1, 2, 2]], np.uint8)
    cm = cm_of(gt, gt, 3)
    assert iou_per_class(cm) == [1.0, 1.0, 1.0]
    assert miou(cm) == 1.0 and pixel_accuracy(cm) == 1.0
    assert pixel_accuracy(cm_of((gt + 1) % 3, gt, 3)) == 0.0


def test_undefined_policy():
    gt = np.array([[0, 0, 0, 0]], np.uint8)
    pred = np.array([[0, 1, 1, 1]], np.uint8)
    iou = iou_per_class(cm_of(pred, gt, 3))
    # class 1 is predicted but absent from gt: 0; class 2 is absent everywhere
    assert iou == [0.25, 0.0, None]
    assert miou(cm_of(pred, gt, 3)) == 0.125


def test_single_defined_class():
    # only class 0 occurs anywhere, so classes 1 and 2 are left out of the mean
    cm = ConfusionMatrix(np.diag([3, 0, 0]))
    assert iou_per_class(cm) == [1.0, None, None]
    assert miou(cm) == 1.0


def test_errors():
    with pytest.raises(ShapeMismatchError):
        cm_of(PRED, GT[:, :3])
    with pytest.raises(InvariantError):
        cm_of(PRED, np.array([[0, 0, 1, 2]], np.uint8))
    with pytest.raises(InvariantError):
        cm_of(np.array([[0, 0, 1, 2]], np.uint8), GT)
    with pytest.raises(ValueError):
        merge(ConfusionMatrix.zeros(2), ConfusionMatrix.zeros(3))


def test_sequential_equals_merge():
    rng = np.random.default_rng(0)
    a_gt, b_gt = rng.integers(0, 4, (2, 8, 8)).astype(np.uint8)
    a_pr, b_pr = rng.integers(0, 4, (2, 8, 8)).astype(np.uint8)
    z = ConfusionMatrix.zeros(4)
    seq = accumulate(accumulate(z, a_pr, a_gt), b_pr, b_gt)
    assert seq == merge(accumulate(z, a_pr, a_gt), accumulate(z, b_pr, b_gt))


counts = st.lists(st.integers(0, 2**40), min_size=9, max_size=9).map(
    lambda v: ConfusionMatrix(np.array(v, dtype=np.uint64).reshape(3, 3))
)


@settings(max_examples=200)
@given(counts, counts, counts)
def test_monoid_laws(a, b, c):
    z = ConfusionMatrix.zeros(3)
    assert merge(a, z) == a
    assert merge(a, b) == merge(b, a)
    assert merge(merge(a, b), c) == merge(a, merge(b, c))


def test_only_ignore_changes_nothing():
    cm = cm_of(PRED, GT)
    assert accumulate(cm, np.zeros((3, 3), np.uint8), np.full((3, 3), 255, np.uint8)) == cm


def test_permutation_of_classes():
    rng = np.random.default_rng(1)
    gt = rng.integers(0, 4, (10, 10)).astype(np.uint8)
    pred = rng.integers(0, 4, (10, 10)).astype(np.uint8)
    perm = np.array([2, 0, 3, 1], np.uint8)
    base = iou_per_class(cm_of(pred, gt, 4))
    permuted = iou_per_class(cm_of(perm[pred], perm[gt], 4))
    assert [permuted[perm[c]] for c in range(4)] == base


def test_large_counts_do_not_wrap():
    cm = ConfusionMatrix(np.array([[2**33, 0], [0, 2**33]], np.uint64))
    assert (cm + cm).total == 2**35


def test_report_serialization():
    report = MetricReport.from_matrix(cm_of(PRED, GT, 3))
    doc = json.loads(report.to_json())
    assert set(doc) == {"per_class_iou", "miou", "pixel_accuracy", "valid_pixels"}
    assert doc["per_class_iou"] == [0.5, 2 / 3, None] and doc["valid_pixels"] == 4
    rows = list(csv.reader(io.StringIO(report.to_csv())))
    assert len(rows) == 2 and rows[1][-1] == ""
    assert float(rows[1][0]) == report.miou
