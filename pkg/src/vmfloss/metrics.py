"""Evaluation metrics: accuracy, calibration, norm-AUROC and mAP@R."""
from __future__ import annotations

import math
import warnings

import numpy as np

from .geometry import pairwise_poincare, project_to_ball

__all__ = [
    "accuracy", "ece_equal_mass", "nll_from_logits", "fit_temperature",
    "auroc_norm", "map_at_r", "pairwise_distances", "DISTANCES",
]

DISTANCES = ("cosine", "euclidean", "poincare")
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or labels.size == 0:
        raise ValueError("predictions and labels must be non-empty and aligned")
    return float(np.mean(predictions == labels))


def ece_equal_mass(confidences, correct, bins: int = 15) -> float:
    """Expected calibration error over equal-count confidence bins.

    Items are sorted by confidence (stable) and split into ``bins`` chunks
    whose sizes differ by at most one, larger chunks first.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    hit = np.asarray(correct, dtype=np.float64)
    if conf.shape != hit.shape or conf.ndim != 1 or conf.size == 0:
        raise ValueError("need matching non-empty 1-d confidences and flags")
    if np.any((conf < 0) | (conf > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    if conf.size < bins:
        warnings.warn(f"{conf.size} samples < {bins} bins; using one bin per sample")
        bins = conf.size
    order = np.argsort(conf, kind="stable")
    total = 0.0
    for chunk in np.array_split(order, bins):
        total += len(chunk) * abs(conf[chunk].mean() - hit[chunk].mean())
    return float(total / conf.size)


def nll_from_logits(logits, labels, temperature: float = 1.0) -> float:
    s = np.asarray(logits, dtype=np.float64) / temperature
    s = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(s).sum(axis=1))
    return float(np.mean(lse - s[np.arange(len(s)), np.asarray(labels)]))


def fit_temperature(logits, labels, lo: float = -3.0, hi: float = 3.0, tol: float = 1e-7) -> float:
    """Temperature T > 0 minimizing validation NLL of logits / T.

    Golden-section search over log T in [lo, hi].  The result is never worse
    than T = 1 on the data it was fitted to.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or len(logits) == 0 or len(logits) != len(labels):
        raise ValueError("need a non-empty (count, Y) logit matrix with one label per row")
    if np.unique(labels).size < 2:
        raise ValueError("validation set contains a single class; temperature is not identifiable")

    def f(log_t):
        return nll_from_logits(logits, labels, math.exp(log_t))

    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    best = 0.5 * (a + b)
    return math.exp(best) if f(best) <= f(0.0) else 1.0


def auroc_norm(norms, correct) -> float | None:
    """P(norm of a random correct item > norm of a random incorrect one).

    Ties count one half.  Returns ``None`` when either group is empty.
    """
    norms = np.asarray(norms, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    pos, neg = int(correct.sum()), int((~correct).sum())
    if pos == 0 or neg == 0:
        return None
    # average ranks, then the Mann-Whitney U statistic
    order = np.argsort(norms, kind="stable")
    ranks = np.empty(norms.size)
    sorted_vals = norms[order]
    _, start, counts = np.unique(sorted_vals, return_index=True, return_counts=True)
    avg = start + (counts + 1) / 2.0
    ranks[order] = np.repeat(avg, counts)
    u = ranks[correct].sum() - pos * (pos + 1) / 2.0
    return float(u / (pos * neg))


def pairwise_distances(x, distance: str = "cosine", curvature: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if distance == "cosine":
        nrm = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(nrm == 0):
            raise ValueError("cosine distance undefined for zero embeddings")
        u = x / nrm
        return 1.0 - u @ u.T
    if distance == "euclidean":
        sq = np.sum(x * x, axis=1)
        return np.sqrt(np.clip(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0, None))
    if distance == "poincare":
        inside = np.stack([project_to_ball(row, curvature).coords for row in x]) if len(x) else x
        return pairwise_poincare(inside, curvature)
    raise ValueError(f"unknown distance {distance!r}; expected one of {DISTANCES}")


def map_at_r(embeddings, labels, distance: str = "cosine", curvature: float = 1.0,
             return_skipped: bool = False):
    """Mean average precision at R with the query excluded from its ranking.

    R is the query's class size minus one.  Neighbours at equal distance keep
    index order.  Queries from singleton classes are skipped.
    """
    labels = np.asarray(labels)
    dist = pairwise_distances(embeddings, distance, curvature)
    count = len(labels)
    _, inverse, sizes = np.unique(labels, return_inverse=True, return_counts=True)
    class_size = sizes[inverse]
    scores = []
    for q in range(count):
        r = int(class_size[q]) - 1
        if r < 1:
            continue
        row = dist[q].copy()
        row[q] = np.inf
        ranked = np.argsort(row, kind="stable")[:r]
        hits = labels[ranked] == labels[q]
        precision = np.cumsum(hits) / np.arange(1, r + 1)
        scores.append(float(np.sum(precision * hits)) / r)
    skipped = count - len(scores)
    value = float(np.mean(scores)) if scores else float("nan")
    return (value, skipped) if return_skipped else value
