"""Evaluation metrics: regression errors and binary/multiclass scores.

Zero-division conventions: precision (and recall) with an empty denominator
are 0, and F_beta with a zero denominator is 0.
"""

from __future__ import annotations

import numpy as np


def mse(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true, dtype=np.float64), np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    return float(((y_true - y_pred) ** 2).mean())


def mae(y_true, y_pred) -> float:
    y_true, y_pred = np.asarray(y_true, dtype=np.float64), np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    return float(np.abs(y_true - y_pred).mean())


def binary_counts(y_true, y_pred) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) with 1 as the positive class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    return tp, fp, fn, tn


def precision_recall(y_true, y_pred) -> tuple[float, float]:
    tp, fp, fn, _ = binary_counts(y_true, y_pred)
    precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    return precision, recall


def fbeta(precision: float, recall: float, beta: float) -> float:
    """Weighted harmonic mean (1 + beta^2) p r / (beta^2 p + r)."""
    denominator = beta * beta * precision + recall
    if denominator == 0:
        return 0.0
    return (1.0 + beta * beta) * precision * recall / denominator


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("accuracy of empty inputs is undefined")
    return float(np.mean(y_true == y_pred))


def metric_suite(y_true, y_pred, metrics: tuple[str, ...]) -> dict[str, float]:
    """Evaluate the requested metric names on (targets, predictions).

    Regression metrics treat the inputs as real arrays; classification
    metrics treat them as integer labels with 1 the positive class.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("metric_suite needs nonempty inputs")
    out: dict[str, float] = {}
    needs_pr = {"precision", "recall", "F0.5", "F1"} & set(metrics)
    pr = precision_recall(y_true, y_pred) if needs_pr else None
    for name in metrics:
        if name == "MSE":
            out[name] = mse(y_true, y_pred)
        elif name == "MAE":
            out[name] = mae(y_true, y_pred)
        elif name == "precision":
            out[name] = pr[0]
        elif name == "recall":
            out[name] = pr[1]
        elif name == "F0.5":
            out[name] = fbeta(pr[0], pr[1], 0.5)
        elif name == "F1":
            out[name] = fbeta(pr[0], pr[1], 1.0)
        elif name == "accuracy":
            out[name] = accuracy(y_true, y_pred)
        else:
            raise ValueError(f"unknown metric {name!r}")
    return out
