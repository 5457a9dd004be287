"""Evaluation and compression metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


def _as_labels(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels.argmax(axis=1)
    labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label ids must lie in [0, {n_classes})")
    return labels


def confusion_matrix(labels, preds, n_classes: int) -> np.ndarray:
    """Counts with true classes on rows and predicted classes on columns."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(preds)), 1)
    return cm


def f1_scores(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    # 2PR/(P+R) == 2TP/(2TP+FP+FN); 0/0 counts as 0
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    # blocks of equal values share the mean of their 1-based positions
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks


def roc_auc(scores, positive) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=float).ravel()
    positive = np.asarray(positive, dtype=bool).ravel()
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative examples")
    ranks = _average_ranks(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, positive):
    """False/true positive rates over every distinct threshold (descending)."""
    scores = np.asarray(scores, dtype=float).ravel()
    positive = np.asarray(positive, dtype=bool).ravel()
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], positive[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tps = np.cumsum(p)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / max(p.sum(), 1)]
    fpr = np.r_[0.0, fps / max((~p).sum(), 1)]
    return fpr, tpr, np.r_[np.inf, s[last]]


def classification_metrics(scores, labels, auc: bool | None = None) -> dict:
    """Accuracy, F1 and (binary tasks) AUC from an ``(n, NC)`` score matrix.

    ``auc=None`` computes AUC when the task is binary and both classes are
    present; ``auc=True`` forces it and raises for more than two classes.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ValueError("scores must be an (n, n_classes) matrix")
    n, n_classes = scores.shape
    if n < 1:
        raise ValueError("need at least one example")
    if n_classes < 2:
        raise ValueError("classification metrics need at least two classes")
    y = _as_labels(labels, n_classes)
    if y.shape[0] != n:
        raise ValueError("scores and labels disagree on example count")
    preds = scores.argmax(axis=1)
    cm = confusion_matrix(y, preds, n_classes)
    per_class = f1_scores(cm)
    out = {
        "accuracy": float(np.trace(cm) / n),
        "macro_f1": float(per_class.mean()),
        "per_class_f1": per_class.tolist(),
        "confusion_matrix": cm.tolist(),
    }
    if n_classes == 2:
        out["f1"] = float(per_class[1])
    if auc and n_classes > 2:
        raise ValueError("AUC is only defined here for binary tasks")
    if n_classes == 2 and auc is not False:
        positive = y == 1
        if positive.all() or not positive.any():
            if auc:
                raise ValueError("AUC needs both classes present")
        else:
            out["auc"] = roc_auc(scores[:, 1], positive)
    return out


def regression_metrics(preds, targets) -> dict:
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if preds.ndim == 1:
        preds = preds.reshape(-1, 1)
    if targets.ndim == 1:
        targets = targets.reshape(-1, 1)
    if preds.shape != targets.shape:
        raise ValueError(f"prediction shape {preds.shape} != target shape {targets.shape}")
    if preds.shape[0] < 1:
        raise ValueError("need at least one example")
    resid = preds - targets
    return {"mse": float(np.mean(resid ** 2)), "mae": float(np.mean(np.abs(resid)))}


@dataclass(frozen=True)
class CompressionReport:
    original_params: int
    pruned_params: int
    reduction_percent: float
    compression_ratio: float
    sparseness: float
    pruning_performance: float

    def to_dict(self) -> dict:
        return asdict(self)


def compression_from_counts(original_params: int, pruned_params: int,
                            original_weights: int | None = None,
                            pruned_weights: int | None = None) -> CompressionReport:
    if original_params <= 0 or pruned_params < 0:
        raise ValueError("parameter counts must be positive")
    if pruned_params > original_params:
        raise ValueError(
            f"pruned network has more parameters ({pruned_params}) than the original ({original_params})"
        )
    ratio = pruned_params / original_params
    if original_weights is None:
        sparseness = ratio
    else:
        sparseness = pruned_weights / original_weights
    return CompressionReport(
        original_params=original_params,
        pruned_params=pruned_params,
        reduction_percent=100.0 * (1.0 - ratio),
        compression_ratio=ratio,
        sparseness=sparseness,
        pruning_performance=original_params / pruned_params if pruned_params else float("inf"),
    )


def compression_report(original, pruned) -> CompressionReport:
    """Compare two networks. Sparseness counts weights only, not biases."""
    return compression_from_counts(original.n_params, pruned.n_params,
                                   original.n_weights, pruned.n_weights)


def reduction_percent(original_params: int, pruned_params: int) -> float:
    return 100.0 * (1.0 - pruned_params / original_params)
