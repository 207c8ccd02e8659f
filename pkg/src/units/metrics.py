"""Evaluation metric emitters, one record per task kind."""

from __future__ import annotations

import json

import numpy as np
from sklearn.metrics import (
    adjusted_rand_score,
    f1_score,
    normalized_mutual_info_score,
)


def classification_metrics(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    return {
        "accuracy": float((y_true == y_pred).mean()),
        "f1_macro": float(f1_score(y_true, y_pred, average="macro")),
    }


def clustering_metrics(y_true, assignments) -> dict:
    return {
        "ari": float(adjusted_rand_score(y_true, assignments)),
        "nmi": float(normalized_mutual_info_score(y_true, assignments)),
    }


def regression_metrics(target, pred) -> dict:
    target = np.asarray(target, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    err = pred - target
    return {
        "mse": float((err**2).mean()),
        "mae": float(np.abs(err).mean()),
    }


def flag_metrics(true_flags, pred_flags) -> dict:
    t = np.asarray(true_flags, dtype=bool).ravel()
    p = np.asarray(pred_flags, dtype=bool).ravel()
    tp = float((t & p).sum())
    fp = float((~t & p).sum())
    fn = float((t & ~p).sum())
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def confusion_matrix(y_true, y_pred, c: int) -> list[list[int]]:
    m = np.zeros((c, c), dtype=int)
    for t, p in zip(np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)):
        m[t, p] += 1
    return m.tolist()


def emit_metric_record(path, task: str, metrics: dict, extra: dict | None = None):
    """Append one JSON metric record to a file."""
    record = {"task": task, "metrics": metrics}
    if extra:
        record.update(extra)
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record) + "\n")
    return record
