"""
Classification and regression metrics.

Functions:
    - `confusion_counts`: TP, TN, FP, FN at a 0.5 threshold.
    - `matthews_corrcoef`: MCC from confusion counts, 0 when undefined.
    - `metrics_classification`: (ACC, MCC) of probabilities against labels.
    - `metrics_regression`: (MAE, MSE).
    - `binary_cross_entropy`: Mean BCE of probabilities, used as validation loss.
"""
import math

import numpy as np
import numpy.typing as npt

from src.errors import DataValidationError

THRESHOLD: float = 0.5
_EPS: float = 1e-12


def _check(predictions: npt.ArrayLike, targets: npt.ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if predictions.size == 0:
        raise DataValidationError("empty prediction set")
    if predictions.shape != targets.shape:
        raise DataValidationError(f"{predictions.size} predictions for {targets.size} targets")
    return predictions, targets


def confusion_counts(probabilities: npt.ArrayLike, labels: npt.ArrayLike) -> tuple[int, int, int, int]:
    probabilities, labels = _check(probabilities, labels)
    predicted = probabilities > THRESHOLD
    actual = labels > 0.5
    tp = int(np.sum(predicted & actual))
    tn = int(np.sum(~predicted & ~actual))
    fp = int(np.sum(predicted & ~actual))
    fn = int(np.sum(~predicted & actual))
    return tp, tn, fp, fn


def matthews_corrcoef(tp: int, tn: int, fp: int, fn: int) -> float:
    denominator = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denominator == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denominator)


def metrics_classification(probabilities: npt.ArrayLike, labels: npt.ArrayLike) -> tuple[float, float]:
    """
    Accuracy and MCC of thresholded probabilities.

    A probability strictly above 0.5 predicts an upward trend.

    Raises:
        DataValidationError: When the prediction set is empty or lengths differ.
    """
    tp, tn, fp, fn = confusion_counts(probabilities, labels)
    return (tp + tn) / (tp + tn + fp + fn), matthews_corrcoef(tp, tn, fp, fn)


def metrics_regression(predictions: npt.ArrayLike, targets: npt.ArrayLike) -> tuple[float, float]:
    """
    Mean absolute and mean squared error.

    Raises:
        DataValidationError: When the prediction set is empty or lengths differ.
    """
    predictions, targets = _check(predictions, targets)
    errors = predictions - targets
    return float(np.mean(np.abs(errors))), float(np.mean(errors ** 2))


def binary_cross_entropy(probabilities: npt.ArrayLike, labels: npt.ArrayLike) -> float:
    probabilities, labels = _check(probabilities, labels)
    p = np.clip(probabilities, _EPS, 1.0 - _EPS)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))
