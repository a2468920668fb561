"""Rank-based ROC-AUC."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for tied scores.

    Raises:
        ValueError: if ``labels`` do not contain both 0 and 1.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def multiclass_auc(proba, labels, classes=None) -> float:
    """Binary AUC on the last column, or macro one-vs-rest for more classes."""
    proba = np.asarray(proba, dtype=np.float64)
    labels = np.asarray(labels)
    if proba.ndim == 1:
        return roc_auc(proba, labels)
    m = proba.shape[1]
    if m == 2:
        return roc_auc(proba[:, 1], labels == 1)
    present = [c for c in range(m) if 0 < (labels == c).sum() < len(labels)] if classes is None else classes
    if not present:
        raise ValueError("no class with both positives and negatives")
    return float(np.mean([roc_auc(proba[:, c], labels == c) for c in present]))
