"""Command-line interface.

Subcommands: ``gen-data``, ``train``, ``paired``, ``sweep``, ``report``.

Options resolve in three layers: built-in defaults, then the section of a
TOML config file matching the subcommand, then explicit flags. Every run
writes ``manifest.json`` with the fully resolved options and seeds, so a
result directory is replayable from its manifest alone.

Exit codes: 0 for success (a run that never reaches its target accuracy is
still a success; the summary records "not reached"), 2 for configuration or
I/O errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .data import (
    BUDGET_PRESETS,
    generate_synthetic,
    load_dataset,
    partition_iid,
    save_dataset,
)
from .experiments import (
    ARM_BASELINE,
    ARM_GEL,
    ARM_TARGET,
    DEFAULT_GUESS_PERCENTAGES,
    PairedConfig,
    SweepConfig,
    TargetRule,
    paired_summary,
    run_paired,
    run_sweep,
    sweep_rows,
    write_clients_csv,
    write_run_csv,
)
from .federation import BudgetModel, GuessPolicy, TrainConfig, run_training, save_checkpoint
from .models import build_model
from .numeric import seeded_stream
from .reporting import render_report

__all__ = ["main"]


class CliError(Exception):
    """Configuration or I/O problem; maps to exit code 2."""


def _load_config_section(path: str | None, section: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            config = tomllib.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"cannot parse config file {path}: {exc}") from exc
    value = config.get(section, {})
    if not isinstance(value, dict):
        raise CliError(f"config section [{section}] must be a table")
    return value


def _resolve(args: argparse.Namespace, section: dict, defaults: dict) -> dict:
    """defaults < config-file section < explicit CLI flags."""
    resolved = dict(defaults)
    for key in defaults:
        if key in section:
            resolved[key] = section[key]
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = cli_value
    return resolved


def _positive(kind, name, value):
    value = kind(value)
    if value <= 0:
        raise CliError(f"{name} must be positive, got {value}")
    return value


def _budget_model(opts: dict) -> BudgetModel:
    if opts["budget"] is not None and opts["budget_range"] is not None:
        raise CliError("give either --budget or --budget-range, not both")
    if opts["budget_range"] is not None:
        a, b = opts["budget_range"]
        return BudgetModel.heterogeneous_uniform(int(a), int(b))
    if opts["budget"] is not None:
        return BudgetModel.homogeneous(int(opts["budget"]))
    raise CliError("a budget is required: --budget U or --budget-range A B")


def _guess_policy(opts: dict) -> GuessPolicy:
    if opts["guesses"] is not None and opts["guess_pct"] is not None:
        raise CliError("give either --guesses or --guess-pct, not both")
    if opts["guess_pct"] is not None:
        return GuessPolicy.percentage(float(opts["guess_pct"]))
    if opts["guesses"] is not None:
        return GuessPolicy.fixed_count(int(opts["guesses"]))
    return GuessPolicy.fixed_count(0)


def _out_dir(opts: dict) -> Path:
    if not opts.get("out"):
        raise CliError("--out is required")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, command: str, opts: dict, seeds: list[int]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "options": {k: v for k, v in sorted(opts.items())},
        "seeds": seeds,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_data(opts: dict):
    if not opts.get("data"):
        raise CliError("--data is required (a directory written by gen-data)")
    try:
        return load_dataset(opts["data"])
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load dataset from {opts['data']}: {exc}") from exc


def _replicate_seeds(opts: dict) -> tuple[int, ...]:
    base = int(opts["seed"])
    n = _positive(int, "replicates", opts["replicates"])
    return tuple(base + i for i in range(n))


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_gen_data(args) -> int:
    defaults = {
        "clients": 100,
        "dim": 20,
        "classes": 5,
        "alpha": 1.0,
        "beta": 1.0,
        "min_samples": 10,
        "train_fraction": 0.8,
        "seed": 0,
        "iid": False,
        "iid_clients": None,
        "out": None,
    }
    opts = _resolve(args, _load_config_section(args.config, "gen_data"), defaults)
    out = _out_dir(opts)

    stream = seeded_stream(int(opts["seed"]), "data")
    dataset = generate_synthetic(
        num_clients=_positive(int, "clients", opts["clients"]),
        alpha=float(opts["alpha"]),
        beta=float(opts["beta"]),
        d=_positive(int, "dim", opts["dim"]),
        classes=_positive(int, "classes", opts["classes"]),
        min_samples=_positive(int, "min_samples", opts["min_samples"]),
        stream=stream,
        train_fraction=float(opts["train_fraction"]),
    )
    if opts["iid"] or opts["iid_clients"] is not None:
        clients = None if opts["iid_clients"] is None else int(opts["iid_clients"])
        dataset = partition_iid(dataset, stream.spawn("iid"), num_clients=clients)
    save_dataset(dataset, out)
    _write_manifest(out, "gen-data", opts, [int(opts["seed"])])
    print(
        f"wrote {dataset.num_clients} clients, {dataset.total_samples} samples to {out}",
        file=sys.stderr,
    )
    return 0


def _train_defaults() -> dict:
    return {
        "data": None,
        "out": None,
        "model": "logreg",
        "hidden": 20,
        "seed": 0,
        "clients_per_round": 20,
        "batch_size": 5,
        "budget": None,
        "budget_range": None,
        "guesses": None,
        "guess_pct": None,
        "promote_guesses": False,
        "target_acc": None,
        "max_rounds": 50,
        "workers": None,
    }


def _cmd_train(args) -> int:
    opts = _resolve(args, _load_config_section(args.config, "train"), _train_defaults())
    out = _out_dir(opts)
    dataset = _load_data(opts)

    config = TrainConfig(
        dataset=dataset,
        model=build_model(
            opts["model"], dataset.feature_dim, dataset.num_classes, hidden=int(opts["hidden"])
        ),
        budgets=_budget_model(opts),
        guess_policy=_guess_policy(opts),
        clients_per_round=_positive(int, "clients_per_round", opts["clients_per_round"]),
        batch_size=_positive(int, "batch_size", opts["batch_size"]),
        promote_guesses=bool(opts["promote_guesses"]),
        target_accuracy=None if opts["target_acc"] is None else float(opts["target_acc"]),
        max_rounds=int(opts["max_rounds"]),
        master_seed=int(opts["seed"]),
        max_workers=None if opts["workers"] is None else int(opts["workers"]),
    )
    result = run_training(config)

    write_run_csv(out / "run.csv", result.records)
    write_clients_csv(out / "clients.csv", result.records)
    save_checkpoint(out / "checkpoint.json", result.final_params, len(result.records))
    if result.target_accuracy is None:
        target_round = None
    elif result.target_round is None:
        target_round = "not reached"
    else:
        target_round = result.target_round
    summary = {
        "rounds_run": len(result.records),
        "target_accuracy": result.target_accuracy,
        "target_round": target_round,
        "final_accuracy": result.records[-1].test_accuracy if result.records else None,
        "grad_evals_total": result.records[-1].grad_evals if result.records else 0,
        "guessed_steps_total": result.records[-1].guessed_steps if result.records else 0,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    _write_manifest(out, "train", opts, [int(opts["seed"])])
    print(f"wrote {out / 'run.csv'} ({len(result.records)} rounds)", file=sys.stderr)
    return 0


def _cmd_paired(args) -> int:
    defaults = _train_defaults()
    defaults.update(
        {
            "replicates": 5,
            "target_percentile": 80.0,
            "target_anchor": ARM_TARGET,
            "target_scale": 1.0,
        }
    )
    del defaults["promote_guesses"]
    opts = _resolve(args, _load_config_section(args.config, "paired"), defaults)
    out = _out_dir(opts)
    dataset = _load_data(opts)
    seeds = _replicate_seeds(opts)

    try:
        config = PairedConfig(
            dataset=dataset,
            budgets=_budget_model(opts),
            guess_policy=_guess_policy(opts),
            seeds=seeds,
            max_rounds=int(opts["max_rounds"]),
            model_name=opts["model"],
            hidden=int(opts["hidden"]),
            clients_per_round=_positive(int, "clients_per_round", opts["clients_per_round"]),
            batch_size=_positive(int, "batch_size", opts["batch_size"]),
            target_accuracy=None if opts["target_acc"] is None else float(opts["target_acc"]),
            target_rule=TargetRule(
                anchor_arm=str(opts["target_anchor"]),
                percentile=float(opts["target_percentile"]),
                scale=float(opts["target_scale"]),
            ),
            max_workers=None if opts["workers"] is None else int(opts["workers"]),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    result = run_paired(config)

    for (arm, seed), train_result in result.train_results.items():
        run_dir = out / "runs" / arm / f"seed-{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        write_run_csv(run_dir / "run.csv", train_result.records)
        write_clients_csv(run_dir / "clients.csv", train_result.records)

    with open(out / "summary.json", "w") as fh:
        json.dump(paired_summary(result), fh, indent=2)
    _write_manifest(out, "paired", opts, list(seeds))
    print(f"wrote paired results for seeds {list(seeds)} to {out}", file=sys.stderr)
    return 0


def _cmd_sweep(args) -> int:
    defaults = _train_defaults()
    defaults.update(
        {
            "replicates": 5,
            "budget_grid": None,
            "guess_pcts": None,
            "target_percentile": 50.0,
            "target_scale": 0.95,
            "preset": None,
        }
    )
    for gone in ("budget", "budget_range", "guesses", "guess_pct", "promote_guesses"):
        del defaults[gone]
    opts = _resolve(args, _load_config_section(args.config, "sweep"), defaults)
    out = _out_dir(opts)
    dataset = _load_data(opts)
    seeds = _replicate_seeds(opts)

    if opts["budget_grid"] is not None:
        budget_grid = tuple(int(u) for u in opts["budget_grid"])
    elif opts["preset"] is not None:
        if opts["preset"] not in BUDGET_PRESETS:
            raise CliError(
                f"unknown preset {opts['preset']!r}; choose from {sorted(BUDGET_PRESETS)}"
            )
        lo, hi = BUDGET_PRESETS[opts["preset"]]
        budget_grid = (lo, (lo + hi) // 2, hi)
    else:
        raise CliError("a budget grid is required: --budget-grid U... or --preset NAME")
    pcts = (
        tuple(float(p) for p in opts["guess_pcts"])
        if opts["guess_pcts"] is not None
        else DEFAULT_GUESS_PERCENTAGES
    )

    try:
        config = SweepConfig(
            dataset=dataset,
            budget_grid=budget_grid,
            seeds=seeds,
            max_rounds=int(opts["max_rounds"]),
            guess_percentages=pcts,
            model_name=opts["model"],
            hidden=int(opts["hidden"]),
            clients_per_round=_positive(int, "clients_per_round", opts["clients_per_round"]),
            batch_size=_positive(int, "batch_size", opts["batch_size"]),
            target_accuracy=None if opts["target_acc"] is None else float(opts["target_acc"]),
            target_rule=TargetRule(
                ARM_BASELINE, float(opts["target_percentile"]), float(opts["target_scale"])
            ),
            max_workers=None if opts["workers"] is None else int(opts["workers"]),
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    result = run_sweep(config)

    rows = sweep_rows(result)
    with open(out / "sweep.csv", "w", newline="") as fh:
        import csv as _csv

        writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    summary = {
        "target_accuracy": result.target_accuracy,
        "budget_grid": list(budget_grid),
        "guess_percentages": list(pcts),
        "cells": [
            {
                "budget": cell.budget,
                "guess_pct": cell.guess_percentage,
                "mean_rounds_to_target": {
                    ARM_BASELINE: cell.baseline.mean_rounds_to_target(),
                    ARM_GEL: cell.gel.mean_rounds_to_target(),
                    ARM_TARGET: cell.target.mean_rounds_to_target(),
                },
            }
            for cell in result.cells
        ],
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    _write_manifest(out, "sweep", opts, list(seeds))
    print(f"wrote sweep grid ({len(result.cells)} cells) to {out}", file=sys.stderr)
    return 0


def _cmd_report(args) -> int:
    opts = _resolve(args, _load_config_section(args.config, "report"), {"out": None})
    if not opts.get("out"):
        raise CliError("--out is required")
    try:
        written = render_report(opts["out"])
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from exc
    for path in written:
        print(f"wrote {path}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file; flags override its values")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="master seed (default 0)")


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="dataset directory written by gen-data")
    parser.add_argument("--model", choices=["logreg", "mlp"], help="model family")
    parser.add_argument("--hidden", type=int, help="hidden width for --model mlp")
    parser.add_argument("--clients-per-round", type=int, help="clients selected per round (default 20)")
    parser.add_argument("--batch-size", type=int, help="minibatch size per local step (default 5)")
    parser.add_argument("--budget", type=int, help="real local steps per client per round")
    parser.add_argument(
        "--budget-range", type=int, nargs=2, metavar=("A", "B"),
        help="per-round budgets drawn uniformly from [A, B]",
    )
    parser.add_argument("--guesses", type=int, help="fixed guessed steps per client")
    parser.add_argument("--guess-pct", type=float, help="guessed steps as a percentage of the budget")
    parser.add_argument("--target-acc", type=float, help="target pooled test accuracy")
    parser.add_argument("--max-rounds", type=int, help="round horizon (default 50)")
    parser.add_argument("--workers", type=int, help="thread pool size for client updates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedgel",
        description="Deterministic federated-learning simulator where budget-limited "
        "clients extend local Adam training with gradient-reuse guessed steps.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and save a synthetic federated dataset")
    _add_common(p)
    p.add_argument("--clients", type=int, help="number of clients (default 100)")
    p.add_argument("--dim", type=int, help="feature dimension (default 20)")
    p.add_argument("--classes", type=int, help="number of classes (default 5)")
    p.add_argument("--alpha", type=float, help="client model heterogeneity (default 1.0)")
    p.add_argument("--beta", type=float, help="client data heterogeneity (default 1.0)")
    p.add_argument("--min-samples", type=int, help="minimum samples per client (default 10)")
    p.add_argument("--train-fraction", type=float, help="per-client train split (default 0.8)")
    p.add_argument(
        "--iid", action=argparse.BooleanOptionalAction, help="reshuffle all samples across clients"
    )
    p.add_argument(
        "--iid-clients", type=int,
        help="reshuffle and re-deal the pooled samples across this many clients",
    )
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="run one federated training job")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument(
        "--promote-guesses",
        action=argparse.BooleanOptionalAction,
        help="execute assigned guesses as extra real steps (matched-compute arm)",
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("paired", help="run baseline/guessing/matched-compute arms on shared seeds")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--replicates", type=int, help="number of replicate seeds (default 5)")
    p.add_argument(
        "--target-anchor", choices=[ARM_BASELINE, ARM_GEL, ARM_TARGET],
        help="arm whose final accuracies set the derived target",
    )
    p.add_argument("--target-percentile", type=float, help="percentile for the derived target")
    p.add_argument("--target-scale", type=float, help="scale applied to the derived target")
    p.set_defaults(func=_cmd_paired)

    p = sub.add_parser("sweep", help="grid of budgets x guess percentages")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--replicates", type=int, help="number of replicate seeds (default 5)")
    p.add_argument("--budget-grid", type=int, nargs="+", help="budgets to sweep")
    p.add_argument(
        "--preset",
        help="named budget range; the grid becomes its low, middle, and high points",
    )
    p.add_argument("--guess-pcts", type=float, nargs="+", help="guess percentages to sweep")
    p.add_argument("--target-percentile", type=float, help="percentile for the derived target")
    p.add_argument("--target-scale", type=float, help="scale applied to the derived target")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="render figures and summary CSVs for a result directory")
    _add_common(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
