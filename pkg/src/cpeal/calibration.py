"""Entropy-based uncertainty calibration loss and its analytic gradient.

Within a mini-batch the samples are split into incorrect (I) and correct
(C) predictions. Incorrect ones are pushed towards high predictive entropy
and correct ones towards low entropy::

    L_I = mean_{i in I} -log(tanh(H_i) + eps)
    L_C = mean_{j in C} -log(1 - tanh(H_j) + eps)
    L_calib = gamma * L_C + beta * L_I
    L = L_CE + alpha * L_calib

With inter-class weighting on, ``gamma = n_incorrect / m`` and
``beta = n_correct / m``; with it off both are 0.5. A mean over an empty
set is taken to be 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from cpeal.errors import ValidationError
from cpeal.heads import softmax

EPS = 1e-6
_SUM_TOL = 1e-6


def _plogp(p: np.ndarray) -> np.ndarray:
    return p * np.log(np.where(p > 0, p, 1.0))


def _check_probs(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValidationError("probabilities contain NaN or Inf")
    if np.any(p < 0):
        raise ValidationError("probabilities must be non-negative")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > _SUM_TOL):
        raise ValidationError("probability vectors must sum to 1")
    return p


def entropy(p) -> np.ndarray | float:
    """Shannon entropy in nats of one probability vector or of each row."""
    p = _check_probs(p)
    h = -_plogp(p).sum(axis=-1)
    # rounding can leave -0.0 or a hair below zero for one-hot rows
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


def predict(probs: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(probs, axis=-1)


def partition(preds, labels) -> tuple[np.ndarray, np.ndarray]:
    """Indices of incorrect and correct predictions, in batch order."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValidationError(f"length mismatch: {preds.shape} predictions vs {labels.shape} labels")
    wrong = preds != labels
    return np.flatnonzero(wrong), np.flatnonzero(~wrong)


@dataclass(frozen=True)
class CalibBatchLoss:
    loss_ce: float
    loss_i: float
    loss_c: float
    gamma: float
    beta: float
    alpha: float
    n_correct: int
    n_incorrect: int
    loss_calib: float
    loss_total: float
    eps: float = EPS

    def as_dict(self) -> dict:
        return asdict(self)


def balance_weights(n_correct: int, n_incorrect: int, interw: bool = True) -> tuple[float, float]:
    """Return ``(gamma_correct, beta_incorrect)`` for a batch."""
    total = n_correct + n_incorrect
    if not interw or total == 0:
        return 0.5, 0.5
    return n_incorrect / total, n_correct / total


def _check_labels(labels, m: int, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (m,):
        raise ValidationError(f"expected {m} labels, got shape {labels.shape}")
    if m and (labels.min() < 0 or labels.max() >= k):
        raise ValidationError(f"labels must lie in [0, {k})")
    return labels.astype(np.int64)


def calib_loss(probs, labels, alpha: float, interw: bool = True) -> CalibBatchLoss:
    """Full loss breakdown for one mini-batch of predicted probabilities."""
    probs = _check_probs(probs)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ValidationError("calib_loss needs a non-empty m x K batch")
    m, k = probs.shape
    labels = _check_labels(labels, m, k)
    if alpha < 0:
        raise ValidationError("alpha must be non-negative")

    tiny = np.finfo(np.float64).tiny
    loss_ce = float(-np.log(np.maximum(probs[np.arange(m), labels], tiny)).mean())

    u = np.tanh(entropy(probs))
    wrong, right = partition(predict(probs), labels)
    loss_i = float(-np.log(u[wrong] + EPS).mean()) if wrong.size else 0.0
    loss_c = float(-np.log(1.0 - u[right] + EPS).mean()) if right.size else 0.0
    gamma, beta = balance_weights(right.size, wrong.size, interw)
    loss_calib = gamma * loss_c + beta * loss_i
    return CalibBatchLoss(
        loss_ce=loss_ce,
        loss_i=loss_i,
        loss_c=loss_c,
        gamma=gamma,
        beta=beta,
        alpha=float(alpha),
        n_correct=int(right.size),
        n_incorrect=int(wrong.size),
        loss_calib=loss_calib,
        loss_total=loss_ce + alpha * loss_calib,
    )


def grad_total_loss(logits, labels, alpha: float, interw: bool = True) -> np.ndarray:
    """Gradient of the total loss with respect to the logits.

    The correct/incorrect split and the balancing weights are held fixed
    at their forward-pass values.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValidationError("logits must be a non-empty m x K matrix")
    if not np.all(np.isfinite(z)):
        raise ValidationError("logits contain NaN or Inf")
    m, k = z.shape
    labels = _check_labels(labels, m, k)

    p = softmax(z)
    grad = p.copy()
    grad[np.arange(m), labels] -= 1.0
    grad /= m
    if alpha == 0:
        return grad

    plogp = _plogp(p)
    h = -plogp.sum(axis=1)
    u = np.tanh(h)
    sech2 = 1.0 - u * u
    wrong, right = partition(predict(p), labels)
    gamma, beta = balance_weights(right.size, wrong.size, interw)

    dl_dh = np.zeros(m)
    if wrong.size:
        dl_dh[wrong] = -beta * sech2[wrong] / (u[wrong] + EPS) / wrong.size
    if right.size:
        dl_dh[right] = gamma * sech2[right] / (1.0 - u[right] + EPS) / right.size
    # dH/dz_j = -p_j (log p_j + H)
    dh_dz = -(plogp + p * h[:, None])
    return grad + alpha * dl_dh[:, None] * dh_dz


def anneal_alpha(step: int, total_steps: int, alpha_final: float) -> float:
    """Linear ramp from 0 at ``step=0`` to ``alpha_final`` at ``total_steps``."""
    if step < 0 or total_steps < 1 or alpha_final < 0:
        raise ValidationError("anneal_alpha needs step >= 0, total_steps >= 1, alpha_final >= 0")
    if step > total_steps:
        raise ValidationError(f"step {step} beyond total_steps {total_steps}")
    return alpha_final * step / total_steps
