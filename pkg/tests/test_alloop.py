import csv
import dataclasses

import numpy as np
import pytest

from cpeal.alloop import (
    RESULTS_COLUMNS, check_budget, make_head, run_experiment, run_sweep, run_unit,
)
from cpeal.config import ExperimentConfig, HeadConfig
from cpeal.datastore import SynthSpec, save_dataset
from cpeal.errors import ConfigError
from cpeal.heads import init_prompt_head
from cpeal.rng import derive_seed
from cpeal.trainer import TrainConfig

TINY = ExperimentConfig(
    synth=SynthSpec(num_classes=4, dim=8, per_class=20, class_separation=6.0, seed=1),
    train=TrainConfig(epochs=8, base_lr=0.2),
    strategies=("random", "entropy", "cpeal"),
    cycles=3,
    seeds=(0, 1),
)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def strip_timing(rows):
    return [{k: v for k, v in r.items() if not k.endswith("_time_ms")} for r in rows]


def test_results_schema_and_row_count(tmp_path):
    records = run_experiment(TINY, tmp_path)
    rows = read_rows(tmp_path / "results.csv")
    assert list(rows[0]) == RESULTS_COLUMNS
    assert len(rows) == len(records) == 2 * 3 * 3
    for f in ("config.json", "selections.csv", "reliability.csv"):
        assert (tmp_path / f).exists()


def test_canonical_order(tmp_path):
    records = run_experiment(TINY)
    keys = [(r.seed, r.strategy, r.cycle) for r in records]
    expect = [(s, st, c) for s in (0, 1) for st in TINY.strategies for c in (1, 2, 3)]
    assert keys == expect


def test_budget_invariant_and_monotone_pool():
    records = run_experiment(TINY)
    for r in records:
        assert r.n_labeled == r.cycle * 4
        assert 0 <= r.accuracy <= 1 and 0 <= r.ece <= 1
    by_unit = {}
    for r in records:
        by_unit.setdefault((r.seed, r.strategy), []).append(set(r.selected))
    for sels in by_unit.values():
        for a, b in zip(sels, sels[1:]):
            assert not a & b


def test_no_test_leakage(small_ds):
    cfg = dataclasses.replace(TINY, seeds=(0,))
    records = run_unit(cfg, small_ds, 0, "entropy")
    test = set(small_ds.test_idx.tolist())
    assert all(not set(r.selected) & test for r in records)


def test_determinism_except_timing(tmp_path):
    run_experiment(TINY, tmp_path / "a")
    run_experiment(TINY, tmp_path / "b")
    a, b = read_rows(tmp_path / "a/results.csv"), read_rows(tmp_path / "b/results.csv")
    assert strip_timing(a) == strip_timing(b)
    assert (tmp_path / "a/selections.csv").read_bytes() == (tmp_path / "b/selections.csv").read_bytes()


def test_jobs_do_not_change_output(tmp_path):
    run_experiment(TINY, tmp_path / "serial", jobs=1)
    run_experiment(TINY, tmp_path / "parallel", jobs=2)
    assert strip_timing(read_rows(tmp_path / "serial/results.csv")) == \
        strip_timing(read_rows(tmp_path / "parallel/results.csv"))


def test_head_reinitialized_each_cycle(small_ds):
    head = make_head(TINY, small_ds, seed=3, cycle=2)
    fresh = init_prompt_head(4, 8, derive_seed(3, 2))
    assert np.array_equal(head.context, fresh.context)
    assert not np.array_equal(head.context, make_head(TINY, small_ds, seed=3, cycle=1).context)


def test_infeasible_budget_rejected_before_work():
    cfg = dataclasses.replace(TINY, cycles=100)
    with pytest.raises(ConfigError, match="needs"):
        run_experiment(cfg)


def test_check_budget_exact_fit(small_ds):
    # 120 train rows, K=4: 30 cycles fit exactly
    check_budget(dataclasses.replace(TINY, cycles=30), small_ds)
    with pytest.raises(ConfigError):
        check_budget(dataclasses.replace(TINY, cycles=31), small_ds)


def test_dataset_file_and_lora_head(tmp_path, small_ds):
    path = tmp_path / "d.cpeb"
    save_dataset(small_ds, path)
    cfg = dataclasses.replace(TINY, synth=None, dataset_path=str(path), head=HeadConfig(kind="lora"),
                              seeds=(0,), strategies=("badge", "coreset"), cycles=2)
    records = run_experiment(cfg)
    assert [r.n_labeled for r in records] == [4, 8, 4, 8]


def test_train_logs_written(tmp_path):
    cfg = dataclasses.replace(TINY, save_train_logs=True, seeds=(0,), strategies=("cpeal",), cycles=2)
    run_experiment(cfg, tmp_path)
    rows = read_rows(tmp_path / "train_log.csv")
    assert rows and rows[0]["strategy"] == "cpeal"
    # cycle 1 trains on an empty pool, so only cycle 2 logs steps
    assert {r["cycle"] for r in rows} == {"2"}


def test_sweep(tmp_path):
    cfg = dataclasses.replace(TINY, seeds=(0,), strategies=("entropy", "cpeal"), cycles=2)
    best, rows = run_sweep(cfg, [0.1, 0.5, 1.0], tmp_path)
    assert [r["alpha"] for r in rows] == [0.1, 0.5, 1.0]
    top = max(r["final_acc_mean"] for r in rows)
    assert best == min(r["alpha"] for r in rows if r["final_acc_mean"] == top)
    for a in ("0.1", "0.5", "1"):
        assert (tmp_path / f"alpha_{a}" / "results.csv").exists()
    assert (tmp_path / "best_alpha.txt").read_text().strip() == f"{best:g}"

    single, _ = run_sweep(cfg, [0.3], tmp_path / "one")
    assert single == 0.3


@pytest.mark.parametrize("grid", [[], [0.0], [1.5]])
def test_sweep_grid_guards(tmp_path, grid):
    with pytest.raises(ConfigError):
        run_sweep(TINY, grid, tmp_path)
