"""Figures written next to the report tables.

Uses the non-interactive Agg backend; every function saves a PNG and
closes its figure.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
}


def _curves(summary, key: str, ylabel: str, path: Path, scale: float = 1.0) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for strategy in dict.fromkeys(r.strategy for r in summary):
            rows = [r for r in summary if r.strategy == strategy]
            x = [r.cycle for r in rows]
            y = np.array([getattr(r, f"{key}_mean") for r in rows]) * scale
            err = np.array([getattr(r, f"{key}_std") for r in rows]) * scale
            ax.plot(x, y, marker="o", ms=3, label=strategy)
            ax.fill_between(x, y - err, y + err, alpha=0.15)
        ax.set_xlabel("AL cycle")
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_reliability(path_csv: Path, out: Path, cycle: int | None = None) -> Path | None:
    """Reliability diagram per strategy at one cycle, pooling bins across seeds."""
    with open(path_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return None
    cycle = cycle or max(int(r["cycle"]) for r in rows)
    pooled = defaultdict(lambda: defaultdict(lambda: np.zeros(3)))
    edges = {}
    for r in rows:
        if int(r["cycle"]) != cycle:
            continue
        b = int(r["bin"])
        n = float(r["count"])
        pooled[r["strategy"]][b] += (n, n * float(r["mean_conf"]), n * float(r["mean_acc"]))
        edges[b] = (float(r["lower"]), float(r["upper"]))
    strategies = list(pooled)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(strategies), figsize=(3.0 * len(strategies), 3.0), squeeze=False)
        for ax, s in zip(axes[0], strategies):
            bins = sorted(edges)
            lo = np.array([edges[b][0] for b in bins])
            width = np.array([edges[b][1] - edges[b][0] for b in bins])
            tot = np.array([pooled[s][b] for b in bins])
            acc = np.divide(tot[:, 2], tot[:, 0], out=np.zeros(len(bins)), where=tot[:, 0] > 0)
            ax.bar(lo, acc, width=width, align="edge", edgecolor="k", lw=0.5, label="accuracy")
            ax.plot([0, 1], [0, 1], "k--", lw=0.8)
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1)
            ax.set_title(f"{s} (cycle {cycle})", fontsize=9)
            ax.set_xlabel("confidence")
        axes[0][0].set_ylabel("accuracy")
        fig.tight_layout()
        path = out / "reliability.png"
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_train_counts(path_csv: Path, out: Path) -> Path | None:
    """Correct/incorrect counts per training step for the first logged run."""
    with open(path_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return None
    first = rows[0]
    strategy = "cpeal" if any(r["strategy"] == "cpeal" for r in rows) else first["strategy"]
    sel = [r for r in rows if r["seed"] == first["seed"] and r["strategy"] == strategy]
    cycle = min(int(r["cycle"]) for r in sel)
    sel = [r for r in sel if int(r["cycle"]) == cycle]
    it = [int(r["iter"]) for r in sel]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(it, [int(r["n_correct"]) for r in sel], label="n_correct")
        ax.plot(it, [int(r["n_incorrect"]) for r in sel], label="n_incorrect")
        ax.set_xlabel("iteration")
        ax.set_ylabel("count per mini-batch")
        ax.set_title(f"{strategy}, seed {first['seed']}, cycle {cycle}", fontsize=9)
        ax.legend()
        fig.tight_layout()
        path = out / "train_counts.png"
        fig.savefig(path)
        plt.close(fig)
    return path


def render_report(summary, results_dir: Path, out: Path) -> list[Path]:
    out = Path(out)
    written = []
    _curves(summary, "acc", "test accuracy (%)", out / "accuracy.png", scale=100.0)
    _curves(summary, "ece", "ECE", out / "ece.png")
    written += [out / "accuracy.png", out / "ece.png"]
    results_dir = Path(results_dir)
    if (results_dir / "reliability.csv").exists():
        p = plot_reliability(results_dir / "reliability.csv", out)
        if p:
            written.append(p)
    if (results_dir / "train_log.csv").exists():
        p = plot_train_counts(results_dir / "train_log.csv", out)
        if p:
            written.append(p)
    return written
