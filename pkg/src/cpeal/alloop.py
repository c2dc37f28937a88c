"""Active-learning experiment driver.

For every (seed, strategy) pair the labeled pool starts empty. Each cycle
re-initializes the head from ``derive_seed(seed, cycle)``, trains it on the
current labeled pool, selects a budget of rows from the unlabeled pool,
reveals their labels and evaluates the trained head on the test split.

Only ``cpeal`` trains with the calibration term; every baseline, including
``entropy``, runs the identical pipeline with ``alpha = 0``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cpeal import rng as rngmod
from cpeal.config import ExperimentConfig
from cpeal.datastore import TEST, EmbeddingDataset, PoolState, gen_synthetic, load_dataset, reveal_labels
from cpeal.errors import ConfigError, SelectionError
from cpeal.heads import forward, init_lora_head, init_prompt_head, lora_base_weight
from cpeal.metrics import accuracy, ece
from cpeal.selection import select
from cpeal.trainer import TRAIN_LOG_COLUMNS, TrainLog, train_cycle

log = logging.getLogger(__name__)

RESULTS_COLUMNS = ["seed", "cycle", "strategy", "n_labeled", "accuracy", "ece", "selection_time_ms", "train_time_ms"]
TIMING_COLUMNS = ("selection_time_ms", "train_time_ms")
RELIABILITY_COLUMNS = ["seed", "cycle", "strategy", "bin", "lower", "upper", "count", "mean_conf", "mean_acc"]


@dataclass
class CycleRecord:
    seed: int
    cycle: int
    strategy: str
    n_labeled: int
    accuracy: float
    ece: float
    selected: list[int]
    selection_time_ms: float
    train_time_ms: float
    reliability: list[dict] = field(default_factory=list, repr=False)
    train_log: TrainLog | None = field(default=None, repr=False)

    def csv_row(self) -> dict:
        return {c: getattr(self, c) for c in RESULTS_COLUMNS}


def load_experiment_dataset(cfg: ExperimentConfig) -> EmbeddingDataset:
    if cfg.dataset_path is not None:
        return load_dataset(cfg.dataset_path)
    return gen_synthetic(cfg.synth)


def budget_of(cfg: ExperimentConfig, ds: EmbeddingDataset) -> int:
    return cfg.budget_per_cycle or ds.num_classes


def check_budget(cfg: ExperimentConfig, ds: EmbeddingDataset) -> None:
    need = cfg.initial_labeled + cfg.cycles * budget_of(cfg, ds)
    have = ds.train_idx.size
    if need > have:
        raise ConfigError(
            f"{cfg.cycles} cycles x budget {budget_of(cfg, ds)} (+{cfg.initial_labeled} initial) "
            f"needs {need} train rows, dataset has {have}"
        )


def make_head(cfg: ExperimentConfig, ds: EmbeddingDataset, seed: int, cycle: int, lora_base=None):
    """Fresh head for one cycle, seeded by ``derive_seed(seed, cycle)``."""
    head_seed = rngmod.derive_seed(seed, cycle)
    h = cfg.head
    if h.kind == "prompt":
        return init_prompt_head(ds.num_classes, ds.dim, head_seed, ctx=h.ctx, logit_scale=h.logit_scale)
    if lora_base is None:
        lora_base = lora_base_for(cfg, ds, seed)
    return init_lora_head(lora_base, h.rank, head_seed, lora_scale=h.lora_scale)


def lora_base_for(cfg: ExperimentConfig, ds: EmbeddingDataset, seed: int) -> np.ndarray:
    train = ds.train_idx
    return lora_base_weight(
        ds.features[train], ds.labels[train], ds.num_classes, seed,
        shots=cfg.head.lora_base_shots, kind=cfg.head.lora_base,
    )


def evaluate(head, ds: EmbeddingDataset, n_bins: int):
    test = ds.test_idx
    _, probs = forward(head, ds.features[test])
    labels = ds.labels[test]
    report = ece(probs, labels, n_bins)
    return accuracy(np.argmax(probs, axis=1), labels), report


def run_unit(cfg: ExperimentConfig, ds: EmbeddingDataset, seed: int, strategy: str) -> list[CycleRecord]:
    """All cycles for one (seed, strategy) pair."""
    budget = budget_of(cfg, ds)
    alpha = cfg.train.alpha_final if strategy == "cpeal" else 0.0
    tcfg = dataclasses.replace(cfg.train, alpha_final=alpha, seed=seed)
    lora_base = lora_base_for(cfg, ds, seed) if cfg.head.kind == "lora" else None

    pool = PoolState.initial(ds, cfg.initial_labeled, seed)
    records = []
    for cycle in range(1, cfg.cycles + 1):
        pool = dataclasses.replace(pool, cycle=cycle)
        head = make_head(cfg, ds, seed, cycle, lora_base)

        t0 = time.perf_counter()
        head, tlog = train_cycle(head, ds, pool, tcfg)
        train_ms = (time.perf_counter() - t0) * 1e3

        sel = select(strategy, head, ds, pool, budget, seed)
        if np.any(ds.split[sel.indices] == TEST):
            raise SelectionError(f"{strategy} selected test rows at cycle {cycle}")
        pool = reveal_labels(pool, sel.indices)
        expected = cfg.initial_labeled + cycle * budget
        if len(pool.labeled) != expected:
            raise SelectionError(f"labeled pool has {len(pool.labeled)} rows, expected {expected}")

        acc, report = evaluate(head, ds, cfg.ece_bins)
        records.append(CycleRecord(
            seed=seed, cycle=cycle, strategy=strategy, n_labeled=len(pool.labeled),
            accuracy=acc, ece=report.ece, selected=list(sel.indices),
            selection_time_ms=sel.elapsed_ms, train_time_ms=train_ms,
            reliability=list(report.rows()),
            train_log=tlog if cfg.save_train_logs else None,
        ))
        log.debug("seed=%d %s cycle=%d acc=%.4f ece=%.4f", seed, strategy, cycle, acc, report.ece)
    return records


def _run_unit_star(args):
    return run_unit(*args)


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1, ds: EmbeddingDataset | None = None) -> list[CycleRecord]:
    """Run every (seed, strategy) unit and persist the records under ``out_dir``.

    Records come back in canonical order (seed, strategy, cycle) following
    the order of the config lists, whatever ``jobs`` is.
    """
    cfg.validate()
    if ds is None:
        ds = load_experiment_dataset(cfg)
    check_budget(cfg, ds)
    units = [(cfg, ds, seed, strategy) for seed in cfg.seeds for strategy in cfg.strategies]
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_unit_star, units))
    else:
        chunks = [run_unit(*u) for u in units]
    records = [r for chunk in chunks for r in chunk]
    if out_dir is not None:
        write_outputs(cfg, records, out_dir)
    return records


def write_outputs(cfg: ExperimentConfig, records: list[CycleRecord], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULTS_COLUMNS)
        writer.writeheader()
        writer.writerows(r.csv_row() for r in records)
    with open(out / "selections.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "cycle", "strategy", "selected"])
        for r in records:
            writer.writerow([r.seed, r.cycle, r.strategy, " ".join(map(str, r.selected))])
    with open(out / "reliability.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RELIABILITY_COLUMNS)
        writer.writeheader()
        for r in records:
            for row in r.reliability:
                writer.writerow({"seed": r.seed, "cycle": r.cycle, "strategy": r.strategy, **row})
    if cfg.save_train_logs:
        with open(out / "train_log.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["seed", "strategy"] + TRAIN_LOG_COLUMNS)
            writer.writeheader()
            for r in records:
                if r.train_log is not None:
                    for step in r.train_log.records:
                        writer.writerow({"seed": r.seed, "strategy": r.strategy, **step.csv_row()})


def final_cycle_mean(records: list[CycleRecord], strategy: str, key: str = "accuracy") -> float:
    last = max(r.cycle for r in records)
    vals = [getattr(r, key) for r in records if r.strategy == strategy and r.cycle == last]
    return float(np.mean(vals))


def run_sweep(cfg: ExperimentConfig, grid, out_dir, jobs: int = 1) -> tuple[float, list[dict]]:
    """Run the experiment once per calibration weight in ``grid``.

    Picks the weight with the highest mean final-cycle cpeal accuracy;
    ties go to the smaller weight. Writes one result set per weight plus
    sweep.csv and best_alpha.txt.
    """
    grid = [float(a) for a in grid]
    if not grid:
        raise ConfigError("empty alpha grid")
    bad = [a for a in grid if not 0 < a <= 1]
    if bad:
        raise ConfigError(f"alpha values must lie in (0, 1], got {bad}")
    if "cpeal" not in cfg.strategies:
        raise ConfigError("a sweep needs 'cpeal' among the strategies")
    cfg.validate()
    ds = load_experiment_dataset(cfg)
    check_budget(cfg, ds)
    out = Path(out_dir)
    rows = []
    for alpha in grid:
        sub = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, alpha_final=alpha))
        records = run_experiment(sub, out / f"alpha_{alpha:g}", jobs=jobs, ds=ds)
        rows.append({
            "alpha": alpha,
            "final_acc_mean": final_cycle_mean(records, "cpeal", "accuracy"),
            "final_ece_mean": final_cycle_mean(records, "cpeal", "ece"),
        })
    best = min(rows, key=lambda r: (-r["final_acc_mean"], r["alpha"]))["alpha"]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["alpha", "final_acc_mean", "final_ece_mean"])
        writer.writeheader()
        writer.writerows(rows)
    (out / "best_alpha.txt").write_text(f"{best:g}\n")
    return best, rows
