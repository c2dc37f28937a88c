"""Independent reference implementations used by the tests."""

import numpy as np


def coreset_bruteforce(labeled, unlabeled, budget):
    """Greedy k-center by exhaustive distance evaluation; ties go to the lowest position."""
    centers = [np.asarray(x, dtype=float) for x in labeled]
    picked = []
    for _ in range(budget):
        if not centers:
            best = 0
        else:
            best, best_d = None, -1.0
            for i, x in enumerate(unlabeled):
                if i in picked:
                    continue
                d = min(float(np.sum((np.asarray(x, float) - c) ** 2)) for c in centers)
                if d > best_d:
                    best, best_d = i, d
        picked.append(best)
        centers.append(np.asarray(unlabeled[best], dtype=float))
    return picked


def kmeanspp_reference(G, budget, rng):
    """k-means++ seeding written from the textbook description.

    Draw order: one integer for the first center, then one uniform per
    center (scaled by the total mass); a zero-mass state draws uniformly
    among the unchosen rows.
    """
    G = [np.asarray(g, dtype=float) for g in G]
    n = len(G)
    chosen = [int(rng.integers(n))]
    while len(chosen) < budget:
        d2 = []
        for i, g in enumerate(G):
            if i in chosen:
                d2.append(0.0)
            else:
                d2.append(min(float(np.sum((g - G[c]) ** 2)) for c in chosen))
        total = float(np.sum(d2))
        if total > 0:
            target = rng.random() * float(np.cumsum(d2)[-1])
            acc = 0.0
            pick = n - 1
            for i, w in enumerate(d2):
                acc += w
                if acc > target:
                    pick = i
                    break
        else:
            pick = int(rng.choice(np.array([i for i in range(n) if i not in chosen])))
        chosen.append(pick)
    return chosen


def gradient_embedding_direct(p, x):
    """(p - onehot(argmax p)) outer x, one scalar at a time."""
    k, e = len(p), len(x)
    yhat = max(range(k), key=lambda j: (p[j], -j))
    return [(p[j] - (1.0 if j == yhat else 0.0)) * x[d] for j in range(k) for d in range(e)]
