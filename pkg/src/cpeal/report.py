"""Aggregate per-seed results into mean/std tables and figures."""

from __future__ import annotations

import csv
import statistics
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from cpeal.alloop import RESULTS_COLUMNS
from cpeal.errors import ValidationError

SUMMARY_COLUMNS = ["strategy", "cycle", "acc_mean", "acc_std", "ece_mean", "ece_std", "delta_vs_entropy"]


@dataclass(frozen=True)
class SummaryRow:
    strategy: str
    cycle: int
    acc_mean: float
    acc_std: float
    ece_mean: float
    ece_std: float
    n_seeds: int
    delta_vs_entropy: Optional[float] = None

    def csv_row(self) -> dict:
        row = {c: getattr(self, c) for c in SUMMARY_COLUMNS}
        if self.delta_vs_entropy is None:
            row["delta_vs_entropy"] = ""
        return row


def read_results(results_dir) -> list[dict]:
    """Read every results.csv under ``results_dir`` (recursively)."""
    root = Path(results_dir)
    files = [root] if root.is_file() else sorted(root.rglob("results.csv"))
    if not files:
        raise ValidationError(f"no results.csv found under {root}")
    rows = []
    for path in files:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != RESULTS_COLUMNS:
                raise ValidationError(f"{path}: columns {reader.fieldnames} differ from {RESULTS_COLUMNS}")
            for r in reader:
                rows.append({
                    "seed": int(r["seed"]),
                    "cycle": int(r["cycle"]),
                    "strategy": r["strategy"],
                    "n_labeled": int(r["n_labeled"]),
                    "accuracy": float(r["accuracy"]),
                    "ece": float(r["ece"]),
                    "selection_time_ms": float(r["selection_time_ms"]),
                    "train_time_ms": float(r["train_time_ms"]),
                })
    return rows


def _mean_std(values: list[float]) -> tuple[float, float]:
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def summarize(rows: list[dict]) -> list[SummaryRow]:
    """Mean and sample std per (strategy, cycle), plus cpeal minus entropy."""
    groups: "OrderedDict[tuple[str, int], list[dict]]" = OrderedDict()
    for r in rows:
        groups.setdefault((r["strategy"], r["cycle"]), []).append(r)
    stats = {}
    for key, members in groups.items():
        acc = _mean_std([m["accuracy"] for m in members])
        ece = _mean_std([m["ece"] for m in members])
        stats[key] = (acc, ece, len(members))

    strategies = list(OrderedDict.fromkeys(k[0] for k in groups))
    out = []
    for s in strategies:
        for cycle in sorted(c for (st, c) in groups if st == s):
            (am, asd), (em, esd), n = stats[(s, cycle)]
            delta = None
            if s == "cpeal" and ("entropy", cycle) in stats:
                delta = am - stats[("entropy", cycle)][0][0]
            out.append(SummaryRow(s, cycle, am, asd, em, esd, n, delta))
    return out


def format_table(summary: list[SummaryRow]) -> str:
    lines = [
        f"{'strategy':<10} {'cycle':>5}  {'accuracy':>17}  {'ECE':>17}  {'+delta entropy':>14}",
        "-" * 70,
    ]
    for r in summary:
        delta = f"{100 * r.delta_vs_entropy:+.2f}" if r.delta_vs_entropy is not None else ""
        lines.append(
            f"{r.strategy:<10} {r.cycle:>5}  {100 * r.acc_mean:>7.2f} ± {100 * r.acc_std:<7.2f}"
            f"  {r.ece_mean:>7.4f} ± {r.ece_std:<7.4f}  {delta:>14}"
        )
    return "\n".join(lines) + "\n"


def aggregate_report(results_dir, out_dir=None, plots: bool = True) -> list[SummaryRow]:
    """Write summary.csv and summary.txt (and figures) for a results directory."""
    results_dir = Path(results_dir)
    summary = summarize(read_results(results_dir))
    out = Path(out_dir) if out_dir is not None else (results_dir if results_dir.is_dir() else results_dir.parent)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(r.csv_row() for r in summary)
    (out / "summary.txt").write_text(format_table(summary))
    if plots:
        from cpeal import plotting

        plotting.render_report(summary, results_dir if results_dir.is_dir() else results_dir.parent, out)
    return summary
