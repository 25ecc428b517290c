"""Acceptance suite: one test per shipped guarantee, from optimizer
arithmetic up to the three-arm comparisons on a workstation-sized corpus."""

import time

import numpy as np
import pytest

from fedgel.data import generate_synthetic, partition_iid, sample_batch
from fedgel.experiments import (
    ARM_BASELINE,
    ARM_GEL,
    ARM_TARGET,
    PairedConfig,
    SweepConfig,
    TargetRule,
    compute_savings,
    run_paired,
    run_sweep,
    write_clients_csv,
    write_run_csv,
)
from fedgel.federation import (
    BudgetModel,
    ClientPlan,
    GuessPolicy,
    TrainConfig,
    client_update,
    run_training,
)
from fedgel.models import Batch, CountingModel, LogisticModel, ParameterVector, build_model
from fedgel.numeric import seeded_stream
from fedgel.optimizers import AdamState, adam_gradient_step

# Tolerances and budgets, pinned up front.
ADAM_ATOL = 1e-12            # closed-form Adam cases, absolute
FIRST_STEP_PRINTED = -0.0009999999
FIRST_STEP_PRINTED_ATOL = 1e-10  # the printed value keeps 10 decimals
FD_STEP = 1e-5
FD_MAX_REL_ERR = 1e-5
FD_INSTANCES = 20
SPEEDUP_FLOOR = 1.1
GEL_VS_TARGET_FACTOR = 1.25
ADAM_SUITE_LIMIT_S = 1.0
GRADIENT_SUITE_LIMIT_S = 10.0
COMPARISON_LIMIT_S = 600.0

REPLICATE_SEEDS = (101, 102, 103, 104, 105)


@pytest.fixture(scope="module")
def dataset():
    """Single-source synthetic corpus re-dealt IID across 100 clients, so
    every arm can saturate the same fully realizable task."""
    base = seeded_stream(22, "data")
    source = generate_synthetic(1, min_samples=800, stream=base)
    return partition_iid(source, base.spawn("iid"), num_clients=100)


@pytest.fixture(scope="module")
def comparison(dataset):
    config = PairedConfig(
        dataset=dataset,
        budgets=BudgetModel.homogeneous(4),
        guess_policy=GuessPolicy.fixed_count(4),
        seeds=REPLICATE_SEEDS,
        max_rounds=150,
        clients_per_round=20,
        batch_size=5,
        target_rule=TargetRule(ARM_TARGET, 80.0, 1.0),
    )
    start = time.perf_counter()
    result = run_paired(config)
    return result, time.perf_counter() - start


@pytest.fixture(scope="module")
def heterogeneous_runs(dataset):
    def run(lo, hi):
        return run_paired(
            PairedConfig(
                dataset=dataset,
                budgets=BudgetModel.heterogeneous_uniform(lo, hi),
                guess_policy=GuessPolicy.fixed_count(5),
                seeds=REPLICATE_SEEDS,
                max_rounds=120,
                clients_per_round=20,
                batch_size=5,
                target_rule=TargetRule(ARM_BASELINE, 50.0, 1.0),
            )
        )

    # Low and high halves of the synthetic preset's budget range (4, 22).
    return run(4, 13), run(13, 22)


@pytest.fixture(scope="module")
def sweep(dataset):
    return run_sweep(
        SweepConfig(
            dataset=dataset,
            budget_grid=(4, 8),
            guess_percentages=(25.0, 100.0),
            seeds=REPLICATE_SEEDS,
            max_rounds=150,
            clients_per_round=20,
            batch_size=5,
        )
    )


def central_diff_grad(model, params, batch, h):
    flat = params.values
    grad = np.zeros_like(flat)
    for i in range(flat.shape[0]):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        loss_plus, _ = model.loss_grad(ParameterVector(plus, params.layout), batch)
        loss_minus, _ = model.loss_grad(ParameterVector(minus, params.layout), batch)
        grad[i] = (loss_plus - loss_minus) / (2.0 * h)
    return grad


def test_01_adam_closed_form_exactness():
    """First step is -eps*g/(|g|+delta) exactly, and a constant gradient
    pins every later step to the same fixed point."""
    start = time.perf_counter()

    delta, _ = adam_gradient_step(AdamState.fresh(1), np.array([0.5]))
    closed_form = -0.001 * 0.5 / (0.5 + 1e-8)
    assert abs(delta[0] - closed_form) <= ADAM_ATOL
    assert abs(delta[0] - FIRST_STEP_PRINTED) <= FIRST_STEP_PRINTED_ATOL

    grad = np.array([0.5, -2.0, 0.03])
    fixed_point = -0.001 * grad / (np.abs(grad) + 1e-8)
    state = AdamState.fresh(3)
    for _ in range(50):
        delta, state = adam_gradient_step(state, grad)
        np.testing.assert_allclose(delta, fixed_point, rtol=0.0, atol=ADAM_ATOL)

    assert time.perf_counter() - start < ADAM_SUITE_LIMIT_S


def test_02_analytic_gradients_match_finite_differences():
    """Both model families agree with central differences on random
    instances, measured as an infinity-norm relative error."""
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    worst = 0.0
    for index in range(FD_INSTANCES):
        name = "logreg" if index % 5 != 4 else "mlp"
        dim = int(rng.integers(2, 13))
        classes = int(rng.integers(2, 7))
        hidden = int(rng.integers(3, 11))
        model = build_model(name, dim, classes, hidden=hidden)
        params = model.init_params(seeded_stream(1000 + index, "init"))
        rows = int(rng.integers(3, 13))
        batch = Batch(rng.normal(size=(rows, dim)), rng.integers(0, classes, size=rows))

        _, analytic = model.loss_grad(params, batch)
        numeric = central_diff_grad(model, params, batch, FD_STEP)
        scale = max(np.abs(analytic.values).max(), np.abs(numeric).max())
        worst = max(worst, np.abs(analytic.values - numeric).max() / scale)

    assert worst < FD_MAX_REL_ERR
    assert time.perf_counter() - start < GRADIENT_SUITE_LIMIT_S


def test_03_savings_formula_reference_values():
    """Five frozen reference rows for the guessing savings formula."""
    assert compute_savings(633, 668, 20, 5, 20) == 49300
    assert compute_savings(193, 193, 3, 2, 20) == 7720
    assert compute_savings(151, 151, 6, 3, 20) == 9060
    assert compute_savings(136, 151, 4, 2, 20) == 4240
    assert compute_savings(2452, 2614, 4, 4, 20) == 183200


def test_04_guessed_steps_cost_no_gradient_evaluations(dataset):
    """Measured gradient evaluations equal the summed budgets of all selected
    clients, whatever the guess count; the counter proves guesses are free."""
    def run_with_guesses(guesses):
        counting = CountingModel(
            build_model("logreg", dataset.feature_dim, dataset.num_classes)
        )
        config = TrainConfig(
            dataset=dataset,
            model=counting,
            budgets=BudgetModel.homogeneous(4),
            guess_policy=GuessPolicy.fixed_count(guesses),
            clients_per_round=10,
            batch_size=5,
            max_rounds=4,
            master_seed=9,
        )
        return run_training(config), counting

    result, counting = run_with_guesses(6)
    running_evals = 0
    running_guesses = 0
    for record in result.records:
        running_evals += sum(record.budgets)
        running_guesses += sum(record.guesses)
        assert record.grad_evals == running_evals
        assert record.guessed_steps == running_guesses
    assert counting.loss_grad_calls == running_evals

    eval_curves = []
    for guesses in (0, 2, 9):
        res, counter = run_with_guesses(guesses)
        assert counter.loss_grad_calls == res.records[-1].grad_evals
        eval_curves.append([r.grad_evals for r in res.records])
    assert eval_curves[0] == eval_curves[1] == eval_curves[2]

    # Single client update, instrumented directly: 3 real steps, 7 guesses.
    counter = CountingModel(build_model("logreg", dataset.feature_dim, dataset.num_classes))
    params = counter.init_params(seeded_stream(0, "init"))
    plan = ClientPlan(client_id=0, budget=3, guesses=7, batch_size=5)
    _, evals = client_update(
        params, dataset.shards[0], plan, counter, seeded_stream(1, "client/0/0")
    )
    assert evals == counter.loss_grad_calls == 3


def test_05_zero_guessing_is_bitwise_fedavg_with_adam(dataset):
    """fixed_count(0) reproduces a from-scratch federated-averaging loop with
    per-client Adam, bit for bit."""
    u, k, batch_size, seed, rounds = 3, 10, 5, 17, 4
    config = TrainConfig(
        dataset=dataset,
        model=build_model("logreg", dataset.feature_dim, dataset.num_classes),
        budgets=BudgetModel.homogeneous(u),
        guess_policy=GuessPolicy.fixed_count(0),
        clients_per_round=k,
        batch_size=batch_size,
        max_rounds=rounds,
        master_seed=seed,
    )
    result = run_training(config)

    model = LogisticModel(dataset.feature_dim, dataset.num_classes)
    params = model.init_params(seeded_stream(seed, "init")).values
    layout = model.layout
    test_x, test_y = dataset.pooled("test")
    accuracies = []
    for t in range(rounds):
        chosen = seeded_stream(seed, f"select/{t}").gen.choice(
            dataset.num_clients, size=k, replace=False
        )
        updates = {}
        for cid in chosen:
            stream = seeded_stream(seed, f"client/{t}/{int(cid)}")
            state = AdamState.fresh(params.shape[0])
            w = params.copy()
            for _ in range(u):
                batch = sample_batch(dataset.shards[int(cid)], batch_size, stream)
                _, grad = model.loss_grad(ParameterVector(w, layout), batch)
                delta, state = adam_gradient_step(state, grad.values)
                w = w + delta
            updates[int(cid)] = w
        total = np.zeros_like(params)
        for cid in sorted(updates):
            total += updates[cid]
        params = total / k
        pred = np.argmax(model.logits(ParameterVector(params, layout), test_x), axis=1)
        accuracies.append(float((pred == test_y).mean()))

    assert np.array_equal(result.final_params.values, params)
    assert [r.test_accuracy for r in result.records] == accuracies


def test_06_same_seed_gives_identical_csv_output(dataset, tmp_path):
    """Reruns and serial/parallel execution write byte-identical CSVs."""
    def run_and_write(tag, workers):
        config = TrainConfig(
            dataset=dataset,
            model=build_model("logreg", dataset.feature_dim, dataset.num_classes),
            budgets=BudgetModel.heterogeneous_uniform(2, 6),
            guess_policy=GuessPolicy.percentage(50.0),
            clients_per_round=10,
            batch_size=5,
            max_rounds=6,
            master_seed=31,
            max_workers=workers,
        )
        records = run_training(config).records
        out = tmp_path / tag
        out.mkdir()
        write_run_csv(out / "run.csv", records)
        write_clients_csv(out / "clients.csv", records)
        return out

    first = run_and_write("first", None)
    second = run_and_write("second", None)
    parallel = run_and_write("parallel", 4)
    for name in ("run.csv", "clients.csv"):
        reference = (first / name).read_bytes()
        assert (second / name).read_bytes() == reference
        assert (parallel / name).read_bytes() == reference


def test_07_guessing_beats_baseline_and_tracks_promoted_arm(dataset, comparison):
    """Three arms at equal budgets: guessing reaches the derived target in
    fewer mean rounds than no guessing, and stays within 1.25x of the arm
    that runs its guesses as real steps. Wall-clock capped."""
    result, elapsed = comparison
    base_cr = result.arms[ARM_BASELINE].mean_rounds_to_target()
    gel_cr = result.arms[ARM_GEL].mean_rounds_to_target()
    target_cr = result.arms[ARM_TARGET].mean_rounds_to_target()

    assert result.arms[ARM_GEL].reached_all
    assert gel_cr < base_cr
    assert gel_cr <= GEL_VS_TARGET_FACTOR * target_cr
    assert elapsed < COMPARISON_LIMIT_S


def test_08_low_budget_clients_benefit_more(heterogeneous_runs):
    """With budgets drawn from the low half of the synthetic preset range,
    guessing speeds up convergence by more than 1.1x on average, and by at
    least as much as in the high half."""
    low, high = heterogeneous_runs
    low_speedup = low.mean_speedup()
    high_speedup = high.mean_speedup()

    assert low_speedup > SPEEDUP_FLOOR
    assert low_speedup >= high_speedup


def test_09_every_round_starts_with_a_fresh_optimizer_step(dataset):
    """The first local step of each round and client equals a fresh-state
    Adam step on the recorded gradient: no moments survive a round."""

    class RecordingModel:
        def __init__(self, inner):
            self.inner = inner
            self.calls = []

        def __getattr__(self, name):
            return getattr(self.inner, name)

        def loss_grad(self, params, batch):
            loss, grad = self.inner.loss_grad(params, batch)
            self.calls.append((params.values.copy(), grad.values.copy()))
            return loss, grad

    budget = 3
    recorder = RecordingModel(
        build_model("logreg", dataset.feature_dim, dataset.num_classes)
    )
    config = TrainConfig(
        dataset=dataset,
        model=recorder,
        budgets=BudgetModel.homogeneous(budget),
        guess_policy=GuessPolicy.fixed_count(2),
        clients_per_round=5,
        batch_size=5,
        max_rounds=3,
        master_seed=5,
    )
    result = run_training(config)

    calls = iter(recorder.calls)
    for record in result.records:
        broadcast = None
        for _ in record.selected:
            for step in range(budget):
                seen_params, grad = next(calls)
                if step == 0:
                    if broadcast is None:
                        broadcast = seen_params
                    assert np.array_equal(seen_params, broadcast)
                    delta, _ = adam_gradient_step(AdamState.fresh(grad.shape[0]), grad)
                    after_first_step = seen_params + delta
                elif step == 1:
                    assert np.array_equal(seen_params, after_first_step)
    assert next(calls, None) is None


def test_10_quarter_guessing_sweep_never_costs_more(sweep):
    """At 25% guessing the mean rounds-to-target never exceed the baseline's,
    and in every fully-reached cell guessing spends strictly fewer gradient
    evaluations to the shared target than either other arm."""
    checked_cells = 0
    for cell in sweep.cells:
        if cell.guess_percentage == 25.0:
            assert cell.gel.mean_rounds_to_target() <= cell.baseline.mean_rounds_to_target()
        if cell.baseline.reached_all and cell.gel.reached_all and cell.target.reached_all:
            gel_evals = cell.gel.mean_grad_evals_to_target()
            assert gel_evals < cell.baseline.mean_grad_evals_to_target()
            assert gel_evals < cell.target.mean_grad_evals_to_target()
            checked_cells += 1
    assert checked_cells > 0
