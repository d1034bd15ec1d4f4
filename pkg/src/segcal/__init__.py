"""Calibration, ensembling and pseudo-label tooling for semantic segmentation."""

from segcal.calibration import CalibrationBins, ece, reliability_data
from segcal.ensemble import HardPrediction, argmax_prediction, ensemble_average
from segcal.metrics import ConfusionMatrix, MetricReport, iou_per_class, miou, pixel_accuracy
from segcal.pseudo import make_pseudo_labels, threshold_sweep
from segcal.tensorio import IGNORE_ID

__version__ = "0.1.0"

__all__ = [
    "CalibrationBins",
    "ConfusionMatrix",
    "HardPrediction",
    "IGNORE_ID",
    "MetricReport",
    "argmax_prediction",
    "ece",
    "ensemble_average",
    "iou_per_class",
    "make_pseudo_labels",
    "miou",
    "pixel_accuracy",
    "reliability_data",
    "threshold_sweep",
]
