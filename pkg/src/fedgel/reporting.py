"""Report rendering: aggregate CSVs plus matplotlib figures.

A report is a sequential fold over the result files of a finished output
directory. Three layouts are recognized:

* single run      -- ``run.csv`` at the top level,
* paired arms     -- ``runs/<arm>/seed-<seed>/run.csv``,
* sweep           -- ``sweep.csv`` at the top level.

Figures land in ``figures/`` next to the delimited summaries, so a report
directory is self-contained.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .experiments import read_run_csv

__all__ = ["render_report"]

_ARM_STYLE = {
    "baseline": ("tab:blue", "baseline (u real steps)"),
    "gel": ("tab:orange", "guessing (u real + g guessed)"),
    "target": ("tab:green", "matched compute (u + g real)"),
}


def _ensure_figures_dir(out_dir: Path) -> Path:
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    return fig_dir


def _plot_single_run(out_dir: Path) -> list[Path]:
    rows = read_run_csv(out_dir / "run.csv")
    rounds = [r.round for r in rows]
    fig_dir = _ensure_figures_dir(out_dir)

    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    ax_acc.plot(rounds, [r.accuracy for r in rows], color="tab:blue")
    ax_acc.set_xlabel("round")
    ax_acc.set_ylabel("pooled test accuracy")
    ax_acc.set_title("Accuracy")
    ax_loss.plot(rounds, [r.loss for r in rows], color="tab:red")
    ax_loss.set_xlabel("round")
    ax_loss.set_ylabel("pooled train loss")
    ax_loss.set_title("Loss")
    fig.tight_layout()
    path = fig_dir / "training_curves.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def _collect_arm_curves(runs_dir: Path) -> dict[str, list[list[float]]]:
    curves: dict[str, list[list[float]]] = {}
    for arm_dir in sorted(p for p in runs_dir.iterdir() if p.is_dir()):
        arm_curves = []
        for seed_dir in sorted(arm_dir.iterdir()):
            run_csv = seed_dir / "run.csv"
            if run_csv.exists():
                arm_curves.append([r.accuracy for r in read_run_csv(run_csv)])
        if arm_curves:
            curves[arm_dir.name] = arm_curves
    return curves


def _plot_paired(out_dir: Path) -> list[Path]:
    curves = _collect_arm_curves(out_dir / "runs")
    fig_dir = _ensure_figures_dir(out_dir)

    summary_path = out_dir / "summary.json"
    target = None
    if summary_path.exists():
        with open(summary_path) as fh:
            target = json.load(fh).get("target_accuracy")

    fig, ax = plt.subplots(figsize=(7, 4.5))
    band_rows = []
    for arm, arm_curves in curves.items():
        color, label = _ARM_STYLE.get(arm, ("tab:gray", arm))
        length = min(len(c) for c in arm_curves)
        stacked = np.array([c[:length] for c in arm_curves])
        rounds = np.arange(1, length + 1)
        mean = stacked.mean(axis=0)
        lo = stacked.min(axis=0)
        hi = stacked.max(axis=0)
        ax.plot(rounds, mean, color=color, label=label)
        ax.fill_between(rounds, lo, hi, color=color, alpha=0.2, linewidth=0)
        for r, m, a, b in zip(rounds, mean, lo, hi):
            band_rows.append([arm, int(r), repr(float(m)), repr(float(a)), repr(float(b))])
    if target is not None:
        ax.axhline(target, color="black", linestyle=":", linewidth=1, label="target accuracy")
    ax.set_xlabel("round")
    ax.set_ylabel("pooled test accuracy")
    ax.set_title("Accuracy vs round (mean and min/max band over seeds)")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig_path = fig_dir / "accuracy_vs_round.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    csv_path = out_dir / "curve_summary.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arm", "round", "accuracy_mean", "accuracy_min", "accuracy_max"])
        writer.writerows(band_rows)
    return [fig_path, csv_path]


def _plot_sweep(out_dir: Path) -> list[Path]:
    with open(out_dir / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    fig_dir = _ensure_figures_dir(out_dir)

    budgets = sorted({int(r["budget"]) for r in rows})
    pcts = sorted({float(r["guess_pct"]) for r in rows})

    def mean_metric(budget: int, pct: float, arm: str, key: str) -> float:
        values = []
        for r in rows:
            if int(r["budget"]) == budget and float(r["guess_pct"]) == pct and r["arm"] == arm:
                raw = r[key]
                values.append(float(raw) if raw != "not reached" else np.nan)
        return float(np.nanmean(values)) if values else np.nan

    fig, axes = plt.subplots(2, len(budgets), figsize=(4.2 * len(budgets), 7), squeeze=False)
    for col, budget in enumerate(budgets):
        ax_cr, ax_ev = axes[0][col], axes[1][col]
        for arm in ("baseline", "gel", "target"):
            color, label = _ARM_STYLE[arm]
            crs = [mean_metric(budget, pct, arm, "rounds_to_target") for pct in pcts]
            evs = [mean_metric(budget, pct, arm, "grad_evals_to_target") for pct in pcts]
            ax_cr.plot(pcts, crs, marker="o", color=color, label=label)
            ax_ev.plot(pcts, evs, marker="o", color=color, label=label)
        ax_cr.set_title(f"budget u = {budget}")
        ax_cr.set_xlabel("guessed steps (% of u)")
        ax_cr.set_ylabel("mean rounds to target")
        ax_ev.set_xlabel("guessed steps (% of u)")
        ax_ev.set_ylabel("mean gradient evals to target")
        if col == 0:
            ax_cr.legend(fontsize=7)
    fig.tight_layout()
    fig_path = fig_dir / "sweep.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    csv_path = out_dir / "sweep_summary.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["budget", "guess_pct", "arm", "mean_rounds_to_target", "mean_grad_evals_to_target"]
        )
        for budget in budgets:
            for pct in pcts:
                for arm in ("baseline", "gel", "target"):
                    writer.writerow(
                        [
                            budget,
                            pct,
                            arm,
                            repr(float(mean_metric(budget, pct, arm, "rounds_to_target"))),
                            repr(float(mean_metric(budget, pct, arm, "grad_evals_to_target"))),
                        ]
                    )
    return [fig_path, csv_path]


def render_report(out_dir) -> list[Path]:
    """Render figures and summary CSVs for a finished output directory.

    Returns the paths written. Raises FileNotFoundError if the directory does
    not look like any known result layout.
    """
    out_dir = Path(out_dir)
    written: list[Path] = []
    if (out_dir / "sweep.csv").exists():
        written += _plot_sweep(out_dir)
    if (out_dir / "runs").is_dir():
        written += _plot_paired(out_dir)
    if (out_dir / "run.csv").exists():
        written += _plot_single_run(out_dir)
    if not written:
        raise FileNotFoundError(
            f"{out_dir} contains neither run.csv, runs/, nor sweep.csv; nothing to report"
        )
    return written
