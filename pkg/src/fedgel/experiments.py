"""Paired-arm experiments, sweeps, and metric accounting.

The central comparison runs three arms per replicate seed:

* ``baseline``  -- u real steps per client, no guessing,
* ``gel``       -- u real steps plus guessed steps from the configured policy,
* ``target``    -- the guessed steps promoted to real steps (u + g real).

All arms of one replicate share the master seed, so initialization, client
selection, and sampled budgets are identical round-for-round; the arms differ
only in what the clients do with their local step allowance.

Runs execute the full round horizon; rounds-to-target is computed afterwards
from the recorded accuracy curve, so one set of runs supports any target.
When no explicit target accuracy is given, one is derived from the final
accuracies of an anchor arm (percentile across seeds, optionally scaled down,
mirroring the practice of lowering targets to dodge plateau noise).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import FederatedDataset
from .federation import (
    BudgetModel,
    GuessPolicy,
    RoundRecord,
    TrainConfig,
    TrainResult,
    run_training,
)
from .models import Model, build_model

__all__ = [
    "rounds_to_target",
    "compute_savings",
    "speedup",
    "TargetRule",
    "PairedConfig",
    "ExperimentResult",
    "PairedResult",
    "SweepConfig",
    "SweepCell",
    "SweepResult",
    "run_paired",
    "run_sweep",
    "write_run_csv",
    "read_run_csv",
    "write_clients_csv",
    "read_clients_csv",
    "RunRow",
    "ClientRow",
]

ARM_BASELINE = "baseline"
ARM_GEL = "gel"
ARM_TARGET = "target"

DEFAULT_GUESS_PERCENTAGES = (10, 25, 50, 75, 100, 125)


def rounds_to_target(records: list[RoundRecord], target: float) -> int | None:
    """1-based index of the first round whose test accuracy reaches ``target``.

    First crossing only; no sustain requirement. None if never reached.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    for record in records:
        if record.test_accuracy >= target:
            return record.round_index
    return None


def compute_savings(
    cr_target: int, cr_gel: int, u_prime: int, g_prime: int, clients_per_round: int
) -> int:
    """Gradient evaluations avoided by guessing, relative to the arm that
    performs the guessed steps for real:

        (cr_target * (u' + g') - cr_gel * u') * clients_per_round

    Exact integer arithmetic; a negative value means guessing cost more.
    """
    for name, value in (
        ("cr_target", cr_target),
        ("cr_gel", cr_gel),
        ("u_prime", u_prime),
        ("g_prime", g_prime),
        ("clients_per_round", clients_per_round),
    ):
        if value < 0:
            raise ValueError(f"{name} must be >= 0")
    return (cr_target * (u_prime + g_prime) - cr_gel * u_prime) * clients_per_round


def speedup(cr_baseline: int | None, cr_gel: int | None) -> float | None:
    """Round-count ratio baseline/gel; > 1 means guessing converged faster.

    Undefined (None) when either arm never reached the target.
    """
    if cr_baseline is None or cr_gel is None:
        return None
    if cr_gel <= 0:
        raise ValueError("cr_gel must be positive")
    return cr_baseline / cr_gel


@dataclass(frozen=True)
class TargetRule:
    """Recipe for deriving a target accuracy from finished runs: take the
    given percentile of the anchor arm's final accuracies across seeds, then
    scale (scale < 1 backs the target off the plateau)."""

    anchor_arm: str = ARM_TARGET
    percentile: float = 80.0
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.percentile <= 100.0:
            raise ValueError("percentile must lie in [0, 100]")
        if not 0.0 < self.scale <= 1.0:
            raise ValueError("scale must lie in (0, 1]")

    def derive(self, final_accuracies: list[float]) -> float:
        target = self.scale * float(np.percentile(final_accuracies, self.percentile))
        # Keep the derived value usable as a strict-interval target.
        return float(np.clip(target, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0)))


@dataclass
class PairedConfig:
    """One three-arm comparison over >= 5 replicate seeds."""

    dataset: FederatedDataset
    budgets: BudgetModel
    guess_policy: GuessPolicy
    seeds: tuple[int, ...]
    max_rounds: int
    model_name: str = "logreg"
    hidden: int = 20
    clients_per_round: int = 20
    batch_size: int = 5
    target_accuracy: float | None = None
    target_rule: TargetRule = field(default_factory=TargetRule)
    include_target_arm: bool = True
    max_workers: int | None = None

    def __post_init__(self):
        if len(self.seeds) < 5:
            raise ValueError("paired comparisons need at least 5 replicate seeds")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("replicate seeds must be distinct")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    def build_model(self) -> Model:
        return build_model(
            self.model_name,
            self.dataset.feature_dim,
            self.dataset.num_classes,
            hidden=self.hidden,
        )

    def arm_train_config(self, arm: str, seed: int) -> TrainConfig:
        if arm == ARM_BASELINE:
            policy, promote = GuessPolicy.fixed_count(0), False
        elif arm == ARM_GEL:
            policy, promote = self.guess_policy, False
        elif arm == ARM_TARGET:
            policy, promote = self.guess_policy, True
        else:
            raise ValueError(f"unknown arm {arm!r}")
        return TrainConfig(
            dataset=self.dataset,
            model=self.build_model(),
            budgets=self.budgets,
            guess_policy=policy,
            clients_per_round=self.clients_per_round,
            batch_size=self.batch_size,
            promote_guesses=promote,
            target_accuracy=None,
            max_rounds=self.max_rounds,
            master_seed=seed,
            max_workers=self.max_workers,
        )


@dataclass
class ExperimentResult:
    """One arm's outcomes across all replicate seeds."""

    arm: str
    seeds: tuple[int, ...]
    target_accuracy: float
    max_rounds: int
    rounds_to_target: list[int | None]
    grad_evals_to_target: list[int | None]
    grad_evals_total: list[int]
    guessed_steps_total: list[int]
    curves: list[list[float]]
    records: list[list[RoundRecord]]

    @property
    def final_accuracies(self) -> list[float]:
        return [curve[-1] for curve in self.curves]

    @property
    def reached_all(self) -> bool:
        return all(cr is not None for cr in self.rounds_to_target)

    def mean_rounds_to_target(self) -> float:
        """Mean CR across seeds; runs that never reached the target are
        censored at the horizon, understating how much faster a faster arm
        is (the conservative direction for comparisons)."""
        return float(
            np.mean([cr if cr is not None else self.max_rounds for cr in self.rounds_to_target])
        )

    def mean_grad_evals_to_target(self) -> float:
        values = [
            evals if evals is not None else total
            for evals, total in zip(self.grad_evals_to_target, self.grad_evals_total)
        ]
        return float(np.mean(values))


@dataclass
class PairedResult:
    config: PairedConfig
    target_accuracy: float
    arms: dict[str, ExperimentResult]
    train_results: dict[tuple[str, int], TrainResult]

    def mean_speedup(self) -> float | None:
        """Mean of per-seed baseline/gel round ratios (pairing preserved);
        unreached runs are censored at the horizon."""
        base = self.arms[ARM_BASELINE]
        gel = self.arms[ARM_GEL]
        ratios = []
        for cr_b, cr_g in zip(base.rounds_to_target, gel.rounds_to_target):
            cr_b = cr_b if cr_b is not None else base.max_rounds
            cr_g = cr_g if cr_g is not None else gel.max_rounds
            ratios.append(cr_b / cr_g)
        return float(np.mean(ratios))


def _summarize_arm(
    arm: str,
    runs: list[TrainResult],
    seeds: tuple[int, ...],
    target: float,
    max_rounds: int,
) -> ExperimentResult:
    crs, evals_at, evals_total, guesses_total, curves, all_records = [], [], [], [], [], []
    for result in runs:
        records = result.records
        cr = rounds_to_target(records, target)
        crs.append(cr)
        evals_at.append(records[cr - 1].grad_evals if cr is not None else None)
        evals_total.append(records[-1].grad_evals if records else 0)
        guesses_total.append(records[-1].guessed_steps if records else 0)
        curves.append([r.test_accuracy for r in records])
        all_records.append(records)
    return ExperimentResult(
        arm=arm,
        seeds=seeds,
        target_accuracy=target,
        max_rounds=max_rounds,
        rounds_to_target=crs,
        grad_evals_to_target=evals_at,
        grad_evals_total=evals_total,
        guessed_steps_total=guesses_total,
        curves=curves,
        records=all_records,
    )


def run_paired(config: PairedConfig) -> PairedResult:
    """Run every (arm, seed) cell, derive the target if not given, and
    aggregate per-arm rounds-to-target and gradient-evaluation totals."""
    arms = [ARM_BASELINE, ARM_GEL]
    if config.include_target_arm:
        arms.append(ARM_TARGET)

    train_results: dict[tuple[str, int], TrainResult] = {}
    for arm in arms:
        for seed in config.seeds:
            train_results[(arm, seed)] = run_training(config.arm_train_config(arm, seed))

    target = config.target_accuracy
    if target is None:
        anchor = config.target_rule.anchor_arm
        if anchor not in arms:
            raise ValueError(f"target rule anchors on {anchor!r}, which is not being run")
        finals = [
            train_results[(anchor, seed)].records[-1].test_accuracy for seed in config.seeds
        ]
        target = config.target_rule.derive(finals)

    summaries = {
        arm: _summarize_arm(
            arm,
            [train_results[(arm, seed)] for seed in config.seeds],
            config.seeds,
            target,
            config.max_rounds,
        )
        for arm in arms
    }
    return PairedResult(
        config=config,
        target_accuracy=target,
        arms=summaries,
        train_results=train_results,
    )


@dataclass
class SweepConfig:
    """Grid of budgets x guess percentages, each cell a paired comparison."""

    dataset: FederatedDataset
    budget_grid: tuple[int, ...]
    seeds: tuple[int, ...]
    max_rounds: int
    guess_percentages: tuple[float, ...] = DEFAULT_GUESS_PERCENTAGES
    model_name: str = "logreg"
    hidden: int = 20
    clients_per_round: int = 20
    batch_size: int = 5
    target_accuracy: float | None = None
    target_rule: TargetRule = field(
        default_factory=lambda: TargetRule(ARM_BASELINE, 50.0, 0.95)
    )
    max_workers: int | None = None

    def __post_init__(self):
        if not self.budget_grid:
            raise ValueError("budget_grid must be nonempty")
        if any(u < 1 for u in self.budget_grid):
            raise ValueError("budgets must be >= 1")
        if not self.guess_percentages:
            raise ValueError("guess_percentages must be nonempty")


@dataclass
class SweepCell:
    budget: int
    guess_percentage: float
    baseline: ExperimentResult
    gel: ExperimentResult
    target: ExperimentResult


@dataclass
class SweepResult:
    config: SweepConfig
    target_accuracy: float
    cells: list[SweepCell]


def run_sweep(config: SweepConfig) -> SweepResult:
    """Run the full grid. The baseline arm is shared across percentages at a
    given budget. The target accuracy, unless given, is derived from the
    slowest configuration (baseline at the smallest budget) so every cell has
    a reachable goal."""
    smallest = min(config.budget_grid)

    def paired_for(budget: int, pct: float) -> PairedConfig:
        return PairedConfig(
            dataset=config.dataset,
            budgets=BudgetModel.homogeneous(budget),
            guess_policy=GuessPolicy.percentage(pct),
            seeds=config.seeds,
            max_rounds=config.max_rounds,
            model_name=config.model_name,
            hidden=config.hidden,
            clients_per_round=config.clients_per_round,
            batch_size=config.batch_size,
            target_accuracy=config.target_accuracy,
            max_workers=config.max_workers,
        )

    # All (budget, pct, arm, seed) runs, with baselines keyed once per budget.
    baseline_runs: dict[int, list[TrainResult]] = {}
    cell_runs: dict[tuple[int, float, str], list[TrainResult]] = {}
    for budget in config.budget_grid:
        cfg0 = paired_for(budget, config.guess_percentages[0])
        baseline_runs[budget] = [
            run_training(cfg0.arm_train_config(ARM_BASELINE, seed)) for seed in config.seeds
        ]
        for pct in config.guess_percentages:
            cfg = paired_for(budget, pct)
            for arm in (ARM_GEL, ARM_TARGET):
                cell_runs[(budget, pct, arm)] = [
                    run_training(cfg.arm_train_config(arm, seed)) for seed in config.seeds
                ]

    target = config.target_accuracy
    if target is None:
        anchor_finals = [
            result.records[-1].test_accuracy for result in baseline_runs[smallest]
        ]
        target = config.target_rule.derive(anchor_finals)

    cells = []
    for budget in config.budget_grid:
        base_summary = _summarize_arm(
            ARM_BASELINE, baseline_runs[budget], config.seeds, target, config.max_rounds
        )
        for pct in config.guess_percentages:
            cells.append(
                SweepCell(
                    budget=budget,
                    guess_percentage=pct,
                    baseline=base_summary,
                    gel=_summarize_arm(
                        ARM_GEL,
                        cell_runs[(budget, pct, ARM_GEL)],
                        config.seeds,
                        target,
                        config.max_rounds,
                    ),
                    target=_summarize_arm(
                        ARM_TARGET,
                        cell_runs[(budget, pct, ARM_TARGET)],
                        config.seeds,
                        target,
                        config.max_rounds,
                    ),
                )
            )
    return SweepResult(config=config, target_accuracy=target, cells=cells)


# ---------------------------------------------------------------------------
# File formats. Floats are written with repr so parsing them back yields the
# exact same doubles, which is what makes byte-identical reruns checkable.


@dataclass(frozen=True)
class RunRow:
    round: int
    accuracy: float
    loss: float
    grad_evals: int
    guessed_steps: int


@dataclass(frozen=True)
class ClientRow:
    round: int
    client_id: int
    budget: int
    guesses: int


def write_run_csv(path, records: list[RoundRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "accuracy", "loss", "grad_evals", "guessed_steps"])
        for r in records:
            writer.writerow(
                [r.round_index, repr(r.test_accuracy), repr(r.train_loss), r.grad_evals, r.guessed_steps]
            )


def read_run_csv(path) -> list[RunRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                RunRow(
                    round=int(row["round"]),
                    accuracy=float(row["accuracy"]),
                    loss=float(row["loss"]),
                    grad_evals=int(row["grad_evals"]),
                    guessed_steps=int(row["guessed_steps"]),
                )
            )
    return rows


def write_clients_csv(path, records: list[RoundRecord]) -> None:
    """Per-round client plans: who was selected, with what budget and guesses.

    This is the log that makes paired-arm stream sharing checkable after the
    fact: comparable runs must agree on every (round, client_id, budget) row.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client_id", "budget", "guesses"])
        for r in records:
            for cid, budget, guesses in zip(r.selected, r.budgets, r.guesses):
                writer.writerow([r.round_index, cid, budget, guesses])


def read_clients_csv(path) -> list[ClientRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(
                ClientRow(
                    round=int(row["round"]),
                    client_id=int(row["client_id"]),
                    budget=int(row["budget"]),
                    guesses=int(row["guesses"]),
                )
            )
    return rows


def rows_from_records(records: list[RoundRecord]) -> list[RunRow]:
    return [
        RunRow(r.round_index, r.test_accuracy, r.train_loss, r.grad_evals, r.guessed_steps)
        for r in records
    ]


def paired_summary(result: PairedResult) -> dict:
    """JSON-ready digest: per-arm CR statistics, speedup, and savings."""
    summary: dict = {
        "target_accuracy": result.target_accuracy,
        "seeds": list(result.config.seeds),
        "max_rounds": result.config.max_rounds,
        "arms": {},
    }
    for arm, res in result.arms.items():
        summary["arms"][arm] = {
            "rounds_to_target": [cr if cr is not None else "not reached" for cr in res.rounds_to_target],
            "mean_rounds_to_target": res.mean_rounds_to_target(),
            "grad_evals_to_target": [
                e if e is not None else "not reached" for e in res.grad_evals_to_target
            ],
            "grad_evals_total": res.grad_evals_total,
            "guessed_steps_total": res.guessed_steps_total,
            "final_accuracy_mean": float(np.mean(res.final_accuracies)),
            "final_accuracy_min": float(np.min(res.final_accuracies)),
            "final_accuracy_max": float(np.max(res.final_accuracies)),
        }
    summary["speedup_baseline_over_gel"] = result.mean_speedup()
    if ARM_TARGET in result.arms:
        gel = result.arms[ARM_GEL]
        tgt = result.arms[ARM_TARGET]
        summary["measured_savings_mean"] = float(
            tgt.mean_grad_evals_to_target() - gel.mean_grad_evals_to_target()
        )
        cfg = result.config
        if cfg.budgets.kind == "homogeneous" and cfg.guess_policy.kind == "fixed":
            cr_t = round(tgt.mean_rounds_to_target())
            cr_g = round(gel.mean_rounds_to_target())
            summary["formula_savings_from_mean_cr"] = compute_savings(
                cr_t,
                cr_g,
                cfg.budgets.u,
                int(cfg.guess_policy.value),
                cfg.clients_per_round,
            )
    return summary


def sweep_rows(result: SweepResult) -> list[dict]:
    """Flat per-(cell, arm, seed) rows for the sweep CSV."""
    rows = []
    for cell in result.cells:
        for arm_name, arm in (
            (ARM_BASELINE, cell.baseline),
            (ARM_GEL, cell.gel),
            (ARM_TARGET, cell.target),
        ):
            for i, seed in enumerate(arm.seeds):
                cr = arm.rounds_to_target[i]
                evals = arm.grad_evals_to_target[i]
                rows.append(
                    {
                        "budget": cell.budget,
                        "guess_pct": cell.guess_percentage,
                        "arm": arm_name,
                        "seed": seed,
                        "rounds_to_target": cr if cr is not None else "not reached",
                        "grad_evals_to_target": evals if evals is not None else "not reached",
                        "grad_evals_total": arm.grad_evals_total[i],
                        "final_accuracy": repr(arm.curves[i][-1]),
                    }
                )
    return rows
