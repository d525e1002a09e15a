"""Ranking metrics for binary link prediction.

Average precision is the area under the precision-recall step curve: scores
are visited in descending order and tied scores form a single threshold, so
``AP = sum_k (R_k - R_{k-1}) P_k`` over distinct thresholds.  AUC-ROC is the
Mann-Whitney statistic, counting a tied positive/negative pair as one half.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError, MetricUndefinedError


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ContractError(f"{s.size} scores vs {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise ContractError("labels must be 0 or 1")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise MetricUndefinedError("metric needs at least one positive and one negative")
    if not np.all(np.isfinite(s)):
        raise ContractError("scores must be finite")
    return s, y


def average_precision(scores, labels) -> float:
    s, y = _validate(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / tp[-1]
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def auc_roc(scores, labels) -> float:
    s, y = _validate(scores, labels)
    # average ranks handle ties with the one-half convention
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_s = s[order]
    starts = np.r_[0, np.nonzero(np.diff(sorted_s))[0] + 1]
    stops = np.r_[starts[1:], len(s)]
    for a, b in zip(starts, stops):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision_reference(scores, labels) -> float:
    """Direct evaluation: one precision/recall point per distinct score, highest first."""
    s, y = _validate(scores, labels)
    total_pos = int(y.sum())
    ap, prev_recall = 0.0, 0.0
    for thr in sorted(set(s.tolist()), reverse=True):
        picked = [i for i in range(len(s)) if s[i] >= thr]
        tp = sum(1 for i in picked if y[i])
        recall = tp / total_pos
        ap += (recall - prev_recall) * (tp / len(picked))
        prev_recall = recall
    return ap


def auc_roc_reference(scores, labels) -> float:
    """All positive/negative pairs: 1 if the positive scores higher, 1/2 on a tie."""
    s, y = _validate(scores, labels)
    pos = [v for v, l in zip(s, y) if l]
    neg = [v for v, l in zip(s, y) if not l]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))
