"""Evaluation metrics: 11-point interpolated average precision and top-1 accuracy."""

from __future__ import annotations

import warnings

import numpy as np

from .errors import InputError

RECALL_LEVELS = np.linspace(0.0, 1.0, 11)


def average_precision_11pt(scores, relevance) -> float:
    """Mean over recall levels {0.0, 0.1, ..., 1.0} of max precision at recall >= level.

    Items are ranked by descending score; ties keep input order. Zero
    relevant items is defined as AP 0 (with a warning) so per-class loops
    never crash on empty classes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    rel = np.asarray(relevance, dtype=bool)
    if scores.shape != rel.shape or scores.ndim != 1:
        raise InputError("scores and relevance must be matching 1-D arrays")
    total_rel = int(rel.sum())
    if total_rel == 0:
        warnings.warn("no relevant items; average precision defined as 0", stacklevel=2)
        return 0.0

    order = np.argsort(-scores, kind="stable")
    hits = rel[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(scores) + 1)
    precision = tp / ranks

    ap = 0.0
    for tenths in range(11):
        # recall >= tenths/10 tested in exact integer arithmetic:
        # tp/total_rel >= j/10  <=>  10*tp >= j*total_rel.
        at_level = precision[10 * tp >= tenths * total_rel]
        ap += at_level.max() if at_level.size else 0.0
    return ap / 11.0


def mean_average_precision(per_class_ap: dict[str, float]) -> float:
    if not per_class_ap:
        raise InputError("no per-class APs to average")
    return float(np.mean(list(per_class_ap.values())))


def top1_accuracy(scores: np.ndarray, classes: list[str], label_sets) -> float:
    """Fraction of rows whose argmax class is among the true labels."""
    scores = np.asarray(scores)
    if scores.shape != (len(label_sets), len(classes)):
        raise InputError(f"score matrix shape {scores.shape} does not match "
                         f"{len(label_sets)} items x {len(classes)} classes")
    picks = scores.argmax(axis=1)
    hits = sum(1 for i, p in enumerate(picks) if classes[p] in label_sets[i])
    return hits / len(label_sets)
