"""Accuracy and top-label expected calibration error."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from cpeal.errors import ValidationError

DEFAULT_BINS = 15


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValidationError("predictions and labels differ in length")
    if preds.size == 0:
        raise ValidationError("accuracy of an empty set is undefined")
    return float(np.mean(preds == labels))


@dataclass(frozen=True)
class EceReport:
    n_bins: int
    counts: np.ndarray
    mean_conf: np.ndarray  # 0 for empty bins
    mean_acc: np.ndarray
    ece: float

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_bins + 1)

    def rows(self):
        """One dict per bin, for reliability diagrams."""
        edges = self.edges
        for b in range(self.n_bins):
            yield {
                "bin": b + 1,
                "lower": float(edges[b]),
                "upper": float(edges[b + 1]),
                "count": int(self.counts[b]),
                "mean_conf": float(self.mean_conf[b]),
                "mean_acc": float(self.mean_acc[b]),
            }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["bin", "lower", "upper", "count", "mean_conf", "mean_acc"])
            writer.writeheader()
            writer.writerows(self.rows())


def ece_from_confidence(conf, correct, n_bins: int = DEFAULT_BINS) -> EceReport:
    """ECE from per-sample confidence and 0/1 correctness.

    Bins are equal-width over (0, 1]; a confidence c goes to the bin whose
    right edge is the first edge >= c, and c = 0 joins the first bin.
    """
    if n_bins < 1:
        raise ValidationError("n_bins must be >= 1")
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if conf.shape != correct.shape or conf.ndim != 1:
        raise ValidationError("confidence and correctness must be equal-length vectors")
    if conf.size == 0:
        raise ValidationError("ECE of an empty set is undefined")
    if np.any((conf < 0) | (conf > 1)) or not np.all(np.isfinite(conf)):
        raise ValidationError("confidences must lie in [0, 1]")

    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left"), 1, n_bins) - 1
    counts = np.bincount(idx, minlength=n_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    safe = np.maximum(counts, 1)
    mean_conf = np.where(counts > 0, conf_sum / safe, 0.0)
    mean_acc = np.where(counts > 0, acc_sum / safe, 0.0)
    ece = float(np.sum(counts / conf.size * np.abs(mean_acc - mean_conf)))
    return EceReport(n_bins, counts, mean_conf, mean_acc, ece)


def ece(probs, labels, n_bins: int = DEFAULT_BINS) -> EceReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ValidationError("probs must be n x K with one label per row")
    preds = np.argmax(probs, axis=1)
    return ece_from_confidence(probs.max(axis=1), preds == labels, n_bins)
