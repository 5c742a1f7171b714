"""Evaluation metrics: AUC for binary tasks, macro-F1 for multiclass.

AUC is the Mann-Whitney statistic computed from average ranks, so ties
contribute 1/2 and any strictly increasing transform of the scores leaves
the value untouched.  Macro-F1 scores a class absent from both labels and
predictions as 0 rather than dropping it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import ImageBatch
from .errors import MetricError


def _average_ranks(values: np.ndarray) -> np.ndarray:
    # 1-based ranks; tied values share the mean of their rank span
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64).ravel()
    if scores.shape != labels.shape:
        raise MetricError(f"scores {scores.shape} vs labels {labels.shape}")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"AUC needs both classes, got {n_pos} positives and {n_neg} negatives")
    ranks = _average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_f1(predictions, labels, num_classes: int) -> float:
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if predictions.shape != labels.shape:
        raise MetricError(f"predictions {predictions.shape} vs labels {labels.shape}")
    if num_classes < 2:
        raise MetricError(f"need at least 2 classes, got {num_classes}")
    total = 0.0
    for c in range(num_classes):
        tp = int(((predictions == c) & (labels == c)).sum())
        fp = int(((predictions == c) & (labels != c)).sum())
        fn = int(((predictions != c) & (labels == c)).sum())
        denom = 2 * tp + fp + fn
        total += 2.0 * tp / denom if denom > 0 else 0.0
    return total / num_classes


def accuracy_at_threshold(scores, labels, threshold: float = 0.5) -> float:
    """Alternative binary metric, off by default; kept behind a config switch."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    return float(((scores >= threshold).astype(np.int64) == labels).mean())


@dataclass(frozen=True)
class EvalResult:
    metric_name: str
    value: float
    n: int


def _scores_and_preds(forward_fn, params, batch: ImageBatch, chunk: int):
    probs = []
    with ad.no_grad():
        for start in range(0, len(batch), chunk):
            logits = forward_fn(params, batch.images[start:start + chunk])
            probs.append(ad.softmax(logits, axis=-1).data.astype(np.float64))
    p = np.concatenate(probs, axis=0)
    return p[:, 1], np.argmax(p, axis=1)


def evaluate(forward_fn, params, batch: ImageBatch, num_classes: int,
             chunk: int = 256, binary_metric: str = "auc") -> EvalResult:
    """Score one split: AUC when binary, macro-F1 otherwise.

    forward_fn(params, images) must return logits of shape (b, num_classes).
    """
    if len(batch) == 0:
        raise MetricError("cannot evaluate an empty batch")
    scores, preds = _scores_and_preds(forward_fn, params, batch, chunk)
    if num_classes == 2:
        if binary_metric == "auc":
            return EvalResult("auc", auc(scores, batch.labels), len(batch))
        if binary_metric == "accuracy":
            return EvalResult("accuracy", accuracy_at_threshold(scores, batch.labels), len(batch))
        raise MetricError(f"unknown binary metric {binary_metric!r}")
    return EvalResult("macro_f1", macro_f1(preds, batch.labels, num_classes), len(batch))
