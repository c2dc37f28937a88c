"""Mini-batch SGD for a head on the labeled pool.

One epoch of constant warmup learning rate is followed by cosine decay.
Each step evaluates the calibration-aware loss on a shuffled mini-batch,
back-propagates through the head and takes a plain SGD step with L2
weight decay on the trainable tensors only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cpeal import rng as rngmod
from cpeal.calibration import CalibBatchLoss, anneal_alpha, calib_loss, grad_total_loss
from cpeal.datastore import TEST, EmbeddingDataset, PoolState
from cpeal.errors import ValidationError
from cpeal.heads import forward


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.002
    warmup_lr: float = 1e-5
    warmup_epochs: int = 1
    epochs: int = 200
    weight_decay: float = 0.0005
    batch_size: int = 32
    alpha_final: float = 0.5
    anneal: bool = False
    interw: bool = True
    # None: cosine runs over the post-warmup epochs and reaches 0 on the
    # last one. An int T gives a cosine with half-period T that keeps
    # oscillating past T, like torch's CosineAnnealingLR(T_max=T).
    cosine_epochs: Optional[int] = None
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if not (self.base_lr > 0 and self.warmup_lr > 0):
            raise ValidationError("learning rates must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")
        if self.batch_size <= 0:
            raise ValidationError("batch_size must be positive")
        if self.warmup_epochs < 0 or self.epochs < max(1, self.warmup_epochs):
            raise ValidationError("need epochs >= warmup_epochs and epochs >= 1")
        if self.alpha_final < 0:
            raise ValidationError("alpha_final must be non-negative")
        if self.cosine_epochs is not None and self.cosine_epochs < 1:
            raise ValidationError("cosine_epochs must be >= 1")
        return self


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValidationError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.warmup_lr
    span = cfg.cosine_epochs or (cfg.epochs - cfg.warmup_epochs - 1)
    if span <= 0:
        return cfg.base_lr
    return 0.5 * cfg.base_lr * (1.0 + math.cos(math.pi * (epoch - cfg.warmup_epochs) / span))


@dataclass(frozen=True)
class StepRecord:
    cycle: int
    epoch: int
    iter: int
    lr: float
    loss: CalibBatchLoss

    def csv_row(self) -> dict:
        return {
            "cycle": self.cycle,
            "epoch": self.epoch,
            "iter": self.iter,
            "n_correct": self.loss.n_correct,
            "n_incorrect": self.loss.n_incorrect,
            "loss_ce": self.loss.loss_ce,
            "loss_calib": self.loss.loss_calib,
            "lr": self.lr,
            "alpha": self.loss.alpha,
        }


TRAIN_LOG_COLUMNS = ["cycle", "epoch", "iter", "n_correct", "n_incorrect", "loss_ce", "loss_calib", "lr", "alpha"]


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> list:
        """One log column, or any CalibBatchLoss field such as ``gamma``."""
        if name in TRAIN_LOG_COLUMNS:
            return [r.csv_row()[name] for r in self.records]
        return [getattr(r.loss, name) for r in self.records]

    def write_csv(self, path, extra: Optional[dict] = None, append: bool = False) -> None:
        """Dump the log; ``extra`` columns (e.g. seed, strategy) are prepended."""
        extra = extra or {}
        fields = list(extra) + TRAIN_LOG_COLUMNS
        with open(path, "a" if append else "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            if not append or fh.tell() == 0:
                writer.writeheader()
            for r in self.records:
                writer.writerow({**extra, **r.csv_row()})


def train_cycle(head, ds: EmbeddingDataset, pool: PoolState, cfg: TrainConfig):
    """Train ``head`` in place on the labeled pool and return ``(head, log)``.

    An empty labeled pool leaves the head untouched (zero-shot analog).
    """
    cfg.validate()
    log = TrainLog()
    labeled = np.asarray(pool.labeled, dtype=np.int64)
    if labeled.size == 0:
        return head, log
    if np.any(ds.split[labeled] == TEST):
        raise ValidationError("labeled pool contains test rows")

    feats = ds.features[labeled].astype(np.float64)
    labels = ds.labels[labeled].astype(np.int64)
    n = labeled.size
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    params = head.trainable()

    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = rngmod.make_rng(rngmod.SHUFFLE, cfg.seed, pool.cycle, epoch).permutation(n)
        for it in range(steps_per_epoch):
            batch = order[it * cfg.batch_size:(it + 1) * cfg.batch_size]
            X, y = feats[batch], labels[batch]
            alpha = anneal_alpha(step, total_steps, cfg.alpha_final) if cfg.anneal else cfg.alpha_final
            logits, probs = forward(head, X)
            loss = calib_loss(probs, y, alpha, cfg.interw)
            grads = head.backward(X, grad_total_loss(logits, y, alpha, cfg.interw))
            for name, p in params.items():
                p -= lr * (grads[name] + cfg.weight_decay * p)
            log.records.append(StepRecord(pool.cycle, epoch, step, lr, loss))
            step += 1
    return head, log
