"""Evaluation reports for fixed-set classification and open-set retrieval."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .heads import HyperbolicHead, LossHead, VmfHead, softmax
from .metrics import accuracy, auroc_norm, ece_equal_mass, fit_temperature, map_at_r, nll_from_logits

__all__ = ["EvalReport", "evaluate", "retrieval_distance", "CSV_COLUMNS"]

CSV_COLUMNS = ("index", "label", "prediction", "confidence", "norm", "correct")


@dataclass
class EvalReport:
    mode: str
    variant: str
    count: int
    accuracy: float | None = None
    nll: float | None = None
    ece: float | None = None
    temperature: float | None = None
    nll_after_temp: float | None = None
    ece_after_temp: float | None = None
    auroc_norm: float | None = None
    map_at_r: float | None = None
    distance: str | None = None
    skipped_queries: int = 0
    cosine_at_test: bool = False
    extra: dict = field(default_factory=dict)
    labels: np.ndarray = field(default=None, repr=False)
    predictions: np.ndarray = field(default=None, repr=False)
    confidences: np.ndarray = field(default=None, repr=False)
    norms: np.ndarray = field(default=None, repr=False)
    embeddings: np.ndarray = field(default=None, repr=False)

    @property
    def correct(self) -> np.ndarray:
        return self.predictions == self.labels

    def summary(self) -> dict:
        keys = ("mode", "variant", "count", "accuracy", "nll", "ece", "temperature",
                "nll_after_temp", "ece_after_temp", "auroc_norm", "map_at_r", "distance",
                "skipped_queries", "cosine_at_test")
        out = {k: getattr(self, k) for k in keys}
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(self.count):
            w.writerow([i, int(self.labels[i]), int(self.predictions[i]),
                        repr(float(self.confidences[i])), repr(float(self.norms[i])),
                        int(self.correct[i])])
        return buf.getvalue()

    def write(self, json_path, csv_path) -> None:
        with open(json_path, "w") as f:
            f.write(self.to_json() + "\n")
        with open(csv_path, "w") as f:
            f.write(self.to_csv())


def retrieval_distance(head: LossHead, cosine_at_test: bool = False) -> str:
    if cosine_at_test:
        return "cosine"
    return {"standard": "euclidean", "hyperbolic": "poincare"}.get(head.variant, "cosine")


def evaluate(encoder, head: LossHead, features, labels, mode: str, rng: np.random.Generator,
             val=None, cosine_at_test: bool = False, draws: int = 10) -> EvalReport:
    """Score a trained encoder + head.

    fixed_set: accuracy, NLL, ECE, norm-AUROC, and (when ``val`` is given
    as ``(features, labels)``) the same after temperature scaling fitted on
    val.  open_set: mAP@R in the head's geometry, or cosine with
    ``cosine_at_test``; for vMF, the mean over ``draws`` sampled embeddings.
    """
    labels = np.asarray(labels, dtype=np.int64)
    z = encoder.embed(features)
    norms = head.embedding_norm(z)
    rep = EvalReport(mode=mode, variant=head.variant, count=len(labels), labels=labels,
                     norms=norms, embeddings=head.embedding(z), cosine_at_test=cosine_at_test)
    if mode == "fixed_set":
        scores = head.log_scores(z, rng)
        probs = softmax(scores)
        rep.predictions = np.argmax(probs, axis=1)
        rep.confidences = probs.max(axis=1)
        rep.accuracy = accuracy(rep.predictions, labels)
        rep.nll = nll_from_logits(scores, labels)
        rep.ece = ece_equal_mass(rep.confidences, rep.correct)
        rep.auroc_norm = auroc_norm(norms, rep.correct)
        if val is not None:
            val_scores = head.log_scores(encoder.embed(val[0]), rng)
            t = fit_temperature(val_scores, val[1])
            rep.temperature = t
            rep.extra["val_nll"] = nll_from_logits(val_scores, val[1])
            rep.extra["val_nll_after_temp"] = nll_from_logits(val_scores, val[1], t)
            scaled = softmax(scores / t)
            rep.nll_after_temp = nll_from_logits(scores, labels, t)
            rep.ece_after_temp = ece_equal_mass(scaled.max(axis=1), rep.correct)
    elif mode == "open_set":
        dist = retrieval_distance(head, cosine_at_test)
        rep.distance = dist
        curvature = head.c if isinstance(head, HyperbolicHead) else 1.0
        if isinstance(head, VmfHead) and not cosine_at_test:
            values = []
            for _ in range(draws):
                v, rep.skipped_queries = map_at_r(head.sample_embeddings(z, rng), labels, "cosine",
                                                  return_skipped=True)
                values.append(v)
            rep.map_at_r = float(np.mean(values))
            rep.extra["map_at_r_draws"] = values
        else:
            rep.map_at_r, rep.skipped_queries = map_at_r(rep.embeddings, labels, dist, curvature,
                                                         return_skipped=True)
        # leave-one-out nearest neighbour stands in for a class prediction
        rep.predictions = _nearest_label(rep.embeddings, labels)
        rep.confidences = np.full(len(labels), np.nan)
        rep.accuracy = accuracy(rep.predictions, labels)
    else:
        raise ValueError(f"mode must be 'fixed_set' or 'open_set', got {mode!r}")
    return rep


def _nearest_label(x, labels):
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    sim = u @ u.T
    np.fill_diagonal(sim, -np.inf)
    return labels[np.argmax(sim, axis=1)]
