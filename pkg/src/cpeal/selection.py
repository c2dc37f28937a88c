"""Acquisition strategies for pool-based active learning.

Single-pass uncertainty scores (entropy, least confidence, margin, and the
calibrated entropy ``cpeal``) feed a class-balanced top-B picker. Coreset
(k-center greedy) and BADGE (k-means++ seeding over loss-gradient
embeddings) choose diverse sets directly. ``random`` is the floor.

``cpeal`` scores exactly like ``entropy``; the difference lies in the head,
which was trained with the calibration loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from cpeal import rng as rngmod
from cpeal.calibration import entropy, predict
from cpeal.datastore import EmbeddingDataset, PoolState
from cpeal.errors import SelectionError, ValidationError
from cpeal.heads import forward

UNCERTAINTY = ("entropy", "softmax", "margin", "cpeal")
STRATEGIES = ("random", "entropy", "softmax", "margin", "coreset", "badge", "cpeal")
COST_CLASS = {
    "random": "O(n)",
    "entropy": "O(n)",
    "softmax": "O(n)",
    "margin": "O(n)",
    "cpeal": "O(n)",
    "coreset": "O(n^2)",
    "badge": "O(n^2)",
}


def parse_strategies(text: str) -> list[str]:
    """Parse a comma-separated strategy list, keeping order and rejecting unknowns."""
    names = [s.strip() for s in text.split(",") if s.strip()]
    if not names:
        raise ValidationError("empty strategy list")
    unknown = [s for s in names if s not in STRATEGIES]
    if unknown:
        raise ValidationError(f"unknown strategies {unknown}; choose from {', '.join(STRATEGIES)}")
    if len(set(names)) != len(names):
        raise ValidationError("duplicate strategies in list")
    return names


@dataclass(frozen=True)
class ScoredPool:
    indices: np.ndarray
    scores: np.ndarray  # larger means more informative
    preds: np.ndarray


def score_uncertainty(strategy: str, probs, indices=None) -> ScoredPool:
    if strategy not in UNCERTAINTY:
        raise ValidationError(f"{strategy!r} is not an uncertainty strategy")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise SelectionError("cannot score an empty pool")
    if indices is None:
        indices = np.arange(probs.shape[0])
    indices = np.asarray(indices, dtype=np.int64)
    if strategy in ("entropy", "cpeal"):
        scores = entropy(probs)
    elif strategy == "softmax":
        scores = 1.0 - probs.max(axis=1)
    elif probs.shape[1] == 1:
        scores = -probs[:, 0]
    else:
        top2 = -np.partition(-probs, 1, axis=1)[:, :2]
        scores = -(top2[:, 0] - top2[:, 1])
    return ScoredPool(indices, np.asarray(scores, dtype=np.float64), predict(probs))


def select_class_balanced(scored: ScoredPool, num_classes: int, budget: int | None = None) -> list[int]:
    """Top-scoring sample per predicted class, then global fill.

    With ``budget`` above ``num_classes`` the per-class pass repeats round
    robin until no class has predicted members left. Ties keep pool order.
    """
    budget = num_classes if budget is None else budget
    n = scored.indices.size
    if budget < 1:
        raise SelectionError("budget must be >= 1")
    if n < budget:
        raise SelectionError(f"pool of {n} cannot supply {budget} samples")
    taken = np.zeros(n, dtype=bool)
    picked: list[int] = []
    if budget <= num_classes:
        # best score per predicted class, first in pool order on ties
        best = np.full(num_classes, -np.inf)
        np.maximum.at(best, scored.preds, scored.scores)
        hits = np.flatnonzero(scored.scores == best[scored.preds])
        _, first = np.unique(scored.preds[hits], return_index=True)
        picked = [int(p) for p in hits[first][:budget]]
        taken[picked] = True
        if len(picked) == budget:
            return [int(scored.indices[p]) for p in picked]

    order = np.argsort(-scored.scores, kind="stable")
    by_class = [order[scored.preds[order] == c] for c in range(num_classes)]
    cursor = [0] * num_classes
    progress = budget > num_classes
    while len(picked) < budget and progress:
        progress = False
        for c in range(num_classes):
            if len(picked) == budget:
                break
            members = by_class[c]
            if cursor[c] < len(members):
                pos = members[cursor[c]]
                cursor[c] += 1
                taken[pos] = True
                picked.append(pos)
                progress = True
    for pos in order:
        if len(picked) == budget:
            break
        if not taken[pos]:
            taken[pos] = True
            picked.append(pos)
    return [int(scored.indices[p]) for p in picked]


def _sqdist(X: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = X - c
    return np.einsum("ij,ij->i", d, d)


def select_coreset(labeled_feats, unlabeled_feats, budget: int) -> list[int]:
    """k-center greedy; returns positions into ``unlabeled_feats``.

    With nothing labeled the first pick is position 0.
    """
    U = np.asarray(unlabeled_feats, dtype=np.float64)
    L = np.asarray(labeled_feats, dtype=np.float64).reshape(-1, U.shape[1])
    n = U.shape[0]
    if budget < 1 or budget > n:
        raise SelectionError(f"coreset budget {budget} not in [1, {n}]")
    min_d = np.full(n, np.inf)
    for row in L:
        np.minimum(min_d, _sqdist(U, row), out=min_d)
    picked = []
    for _ in range(budget):
        if not np.isfinite(min_d).any():
            pos = 0
        else:
            pos = int(np.argmax(min_d))
        picked.append(pos)
        np.minimum(min_d, _sqdist(U, U[pos]), out=min_d)
        min_d[pos] = -1.0  # never re-pick
    return picked


def gradient_embedding(probs, feats) -> np.ndarray:
    """Last-layer cross-entropy gradient at the predicted label: (p - onehot(yhat)) outer x."""
    probs = np.asarray(probs, dtype=np.float64)
    feats = np.asarray(feats, dtype=np.float64)
    delta = probs.copy()
    delta[np.arange(len(delta)), predict(probs)] -= 1.0
    return (delta[:, :, None] * feats[:, None, :]).reshape(len(delta), -1)


def kmeans_pp_seeding(G: np.ndarray, budget: int, rng: np.random.Generator) -> list[int]:
    """k-means++ seeding; falls back to uniform draws once all mass is zero."""
    n = G.shape[0]
    if budget < 1 or budget > n:
        raise SelectionError(f"seeding budget {budget} not in [1, {n}]")
    first = int(rng.integers(n))
    picked = [first]
    chosen = np.zeros(n, dtype=bool)
    chosen[first] = True
    d2 = _sqdist(G, G[first])
    d2[first] = 0.0
    while len(picked) < budget:
        total = d2.sum()
        if total > 0:
            cdf = np.cumsum(d2)
            pos = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            pos = min(pos, n - 1)
            if chosen[pos]:
                pos = int(np.flatnonzero(~chosen & (d2 > 0))[0])
        else:
            pos = int(rng.choice(np.flatnonzero(~chosen)))
        picked.append(pos)
        chosen[pos] = True
        np.minimum(d2, _sqdist(G, G[pos]), out=d2)
        d2[chosen] = 0.0
    return picked


def select_badge(probs, feats, budget: int, seed: int) -> list[int]:
    """BADGE selection; returns positions into the given pool arrays."""
    G = gradient_embedding(probs, feats)
    return kmeans_pp_seeding(G, budget, rngmod.make_rng(rngmod.SELECT, seed))


@dataclass(frozen=True)
class Selection:
    indices: list[int]
    elapsed_ms: float


def select(strategy: str, head, ds: EmbeddingDataset, pool: PoolState, budget: int, seed: int) -> Selection:
    """Pick ``budget`` dataset rows from the unlabeled pool and time the call."""
    if strategy not in STRATEGIES:
        raise ValidationError(f"unknown strategy {strategy!r}")
    unl = np.asarray(pool.unlabeled, dtype=np.int64)
    if budget < 1 or budget > unl.size:
        raise SelectionError(f"budget {budget} exceeds unlabeled pool of {unl.size}")

    t0 = time.perf_counter()
    if strategy == "random":
        rng = rngmod.make_rng(rngmod.SELECT, seed, pool.cycle)
        chosen = [int(i) for i in rng.choice(unl, size=budget, replace=False)]
    elif strategy == "coreset":
        lab = np.asarray(pool.labeled, dtype=np.int64)
        pos = select_coreset(ds.features[lab], ds.features[unl], budget)
        chosen = [int(unl[p]) for p in pos]
    else:
        feats = ds.features[unl]
        _, probs = forward(head, feats)
        if strategy == "badge":
            pos = select_badge(probs, feats, budget, rngmod.derive_seed(seed, pool.cycle))
            chosen = [int(unl[p]) for p in pos]
        else:
            scored = score_uncertainty(strategy, probs, unl)
            chosen = select_class_balanced(scored, ds.num_classes, budget)
    elapsed = (time.perf_counter() - t0) * 1e3
    return Selection(chosen, elapsed)
