"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from cpeal.alloop import run_experiment, run_sweep
from cpeal.config import ExperimentConfig, load_config
from cpeal.datastore import SynthSpec, gen_synthetic, save_dataset
from cpeal.errors import ConfigError, CpealError, ValidationError
from cpeal.report import aggregate_report, format_table
from cpeal.selection import parse_strategies

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _fraction(text: str) -> float:
    value = _positive_float(text)
    if value >= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value


def _strategy_list(text: str) -> list[str]:
    try:
        return parse_strategies(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError("need at least one non-negative seed")
    return seeds


def _alpha_grid(text: str) -> list[float]:
    try:
        grid = [float(a) for a in text.split(",") if a.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha grid must be comma-separated numbers, got {text!r}") from None
    if not grid:
        raise argparse.ArgumentTypeError("alpha grid is empty")
    bad = [a for a in grid if not 0 < a <= 1]
    if bad:
        raise argparse.ArgumentTypeError(f"alpha values must lie in (0, 1], got {bad}")
    return grid


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpeal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-cycle progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-synth", help="write a synthetic Gaussian-blob dataset as CPEB")
    g.add_argument("--classes", type=_positive_int, required=True)
    g.add_argument("--dim", type=_positive_int, required=True)
    g.add_argument("--per-class", type=_positive_int, required=True)
    g.add_argument("--sep", type=_positive_float, required=True, help="distance between class means")
    g.add_argument("--scale", type=_positive_float, default=1.0, help="within-class standard deviation")
    g.add_argument("--test-fraction", type=_fraction, default=0.25)
    g.add_argument("--seed", type=_non_negative_int, default=0)
    g.add_argument("--out", type=Path, required=True)

    def experiment_flags(p):
        p.add_argument("--config", type=Path, help="experiment JSON (defaults apply when omitted)")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--strategies", type=_strategy_list, help="comma-separated strategy list")
        p.add_argument("--seeds", type=_seed_list, help="comma-separated run seeds")
        p.add_argument("--jobs", type=_positive_int, default=1, help="parallel (seed, strategy) workers")
        p.add_argument("--force", action="store_true", help="overwrite existing results")
        p.add_argument("--print-default-config", action="store_true", help="print the default config and exit")

    r = sub.add_parser("run", help="run an active-learning experiment")
    experiment_flags(r)
    r.add_argument("--report", action="store_true", help="aggregate and plot after the run")

    s = sub.add_parser("sweep", help="grid-search the calibration weight alpha")
    experiment_flags(s)
    s.add_argument("--alpha-grid", type=_alpha_grid, help="comma-separated alphas in (0, 1]")

    rep = sub.add_parser("report", help="aggregate results.csv files into tables and figures")
    rep.add_argument("results", type=Path, help="results directory (searched recursively) or a results.csv")
    rep.add_argument("--out", type=Path, help="where to write summary files (default: results directory)")
    rep.add_argument("--no-plots", action="store_true")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    overrides = {}
    if args.strategies:
        overrides["strategies"] = tuple(args.strategies)
    if args.seeds:
        overrides["seeds"] = tuple(args.seeds)
    if args.out:
        overrides["output_dir"] = str(args.out)
    return dataclasses.replace(cfg, **overrides).validate() if overrides else cfg


def _guard_out(out: Path, marker: str, force: bool) -> None:
    if (out / marker).exists() and not force:
        raise ConfigError(f"{out / marker} exists; pass --force to overwrite")


def cmd_gen_synth(args) -> int:
    spec = SynthSpec(
        num_classes=args.classes, dim=args.dim, per_class=args.per_class,
        class_separation=args.sep, within_class_scale=args.scale,
        test_fraction=args.test_fraction, seed=args.seed,
    )
    try:
        spec.validate()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    ds = gen_synthetic(spec)
    save_dataset(ds, args.out)
    print(f"wrote {args.out}: n={ds.n} E={ds.dim} K={ds.num_classes} test={ds.test_idx.size}")
    return EXIT_OK


def cmd_run(args) -> int:
    if args.print_default_config:
        sys.stdout.write(ExperimentConfig().to_json())
        return EXIT_OK
    cfg = _experiment_config(args)
    out = Path(cfg.output_dir)
    _guard_out(out, "results.csv", args.force)
    records = run_experiment(cfg, out, jobs=args.jobs)
    print(f"wrote {len(records)} records to {out / 'results.csv'}")
    if args.report:
        sys.stdout.write(format_table(aggregate_report(out)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.print_default_config:
        sys.stdout.write(ExperimentConfig(strategies=("cpeal",)).to_json())
        return EXIT_OK
    if not args.alpha_grid:
        raise ConfigError("--alpha-grid is required")
    cfg = _experiment_config(args)
    out = Path(cfg.output_dir)
    _guard_out(out, "sweep.csv", args.force)
    best, rows = run_sweep(cfg, args.alpha_grid, out, jobs=args.jobs)
    for row in rows:
        print(f"alpha={row['alpha']:g} final_acc={row['final_acc_mean']:.4f} final_ece={row['final_ece_mean']:.4f}")
    print(f"best alpha: {best:g}")
    return EXIT_OK


def cmd_report(args) -> int:
    summary = aggregate_report(args.results, args.out, plots=not args.no_plots)
    sys.stdout.write(format_table(summary))
    return EXIT_OK


COMMANDS = {"gen-synth": cmd_gen_synth, "run": cmd_run, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"cpeal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CpealError, OSError) as exc:
        print(f"cpeal {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
