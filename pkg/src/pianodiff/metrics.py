"""Evaluation metrics: balanced accuracy, expected class, Spearman."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def balanced_accuracy(pred, truth) -> float:
    """Mean of per-class recalls over the classes present in ``truth``."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DataError("pred and truth must have equal length")
    recalls = []
    for cls in np.unique(truth):
        mask = truth == cls
        recalls.append(float(np.mean(pred[mask] == cls)))
    return float(np.mean(recalls))


def expected_class(p) -> float:
    """Scalar difficulty in [1, 3]: sum of class number times probability."""
    p = np.asarray(p, dtype=float)
    if abs(p.sum() - 1.0) > 1e-6:
        raise DataError(f"probabilities sum to {p.sum()}, not 1")
    return float(np.dot(np.arange(1, len(p) + 1), p))


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing the mean rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Pearson correlation of average ranks (ties share the mean rank)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise DataError("spearman requires two equal-length vectors of length >= 2")
    ra = _average_ranks(a)
    rb = _average_ranks(b)
    sa = ra - ra.mean()
    sb = rb - rb.mean()
    denom = np.sqrt((sa ** 2).sum() * (sb ** 2).sum())
    if denom == 0:
        raise DataError("zero variance ranking: correlation undefined")
    return float((sa * sb).sum() / denom)
