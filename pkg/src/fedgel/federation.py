"""Server round loop, stateless client updates, and plain-average aggregation.

One round: select K distinct clients, sample their budgets, assign guesses,
broadcast the global model, run every client update (serially or in a thread
pool), average the returned models in ascending client-id order, evaluate.

A client update instantiates a fresh Adam optimizer every time (clients are
stateless), performs ``u_k`` real gradient steps, then ``g_k`` guessed steps
that feed the last computed gradient back into the optimizer. Guessed steps
cost no gradient evaluation; the instrumentation counter on the model is the
ground truth for that ledger.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock

import numpy as np

from .data import FederatedDataset, sample_batch
from .models import CountingModel, Model, ParameterVector, _cross_entropy, _softmax_rows
from .numeric import RngStream, seeded_stream
from .optimizers import AdamState, adam_gradient_step

__all__ = [
    "GuessPolicy",
    "BudgetModel",
    "ClientPlan",
    "RoundRecord",
    "TrainConfig",
    "TrainResult",
    "select_clients",
    "assign_guesses",
    "client_update",
    "aggregate",
    "run_training",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class GuessPolicy:
    """How the server assigns guessed steps: a fixed count or a percentage
    of the client's real steps (resolved client-side, since the server may
    not know the budget)."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("fixed", "percent"):
            raise ValueError(f"unknown guess policy kind {self.kind!r}")
        if self.value < 0:
            raise ValueError("guess policy value must be >= 0")
        if self.kind == "fixed" and self.value != int(self.value):
            raise ValueError("fixed guess count must be an integer")

    @classmethod
    def fixed_count(cls, g: int) -> "GuessPolicy":
        return cls("fixed", int(g))

    @classmethod
    def percentage(cls, p: float) -> "GuessPolicy":
        return cls("percent", float(p))


@dataclass(frozen=True)
class BudgetModel:
    """Per-round client budgets: the same ``u`` for everyone, or integers
    drawn uniformly from [a, b] inclusive, fresh every round."""

    kind: str
    u: int = 0
    a: int = 0
    b: int = 0

    def __post_init__(self):
        if self.kind == "homogeneous":
            if self.u < 1:
                raise ValueError("homogeneous budget must be >= 1")
        elif self.kind == "uniform":
            if not (1 <= self.a <= self.b):
                raise ValueError(f"need 1 <= a <= b, got [{self.a}, {self.b}]")
        else:
            raise ValueError(f"unknown budget model kind {self.kind!r}")

    @classmethod
    def homogeneous(cls, u: int) -> "BudgetModel":
        return cls("homogeneous", u=int(u))

    @classmethod
    def heterogeneous_uniform(cls, a: int, b: int) -> "BudgetModel":
        return cls("uniform", a=int(a), b=int(b))

    def sample(self, count: int, stream: RngStream) -> np.ndarray:
        if self.kind == "homogeneous":
            return np.full(count, self.u, dtype=np.int64)
        return stream.gen.integers(self.a, self.b + 1, size=count)


@dataclass(frozen=True)
class ClientPlan:
    """One client's marching orders for a round."""

    client_id: int
    budget: int
    guesses: int
    batch_size: int

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1 (a guess needs a computed gradient to reuse)")
        if self.guesses < 0:
            raise ValueError("guesses must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class RoundRecord:
    """Per-round metrics; counters are cumulative and nondecreasing."""

    round_index: int
    selected: tuple[int, ...]
    budgets: tuple[int, ...]
    guesses: tuple[int, ...]
    test_accuracy: float
    train_loss: float
    grad_evals: int
    guessed_steps: int


@dataclass
class TrainConfig:
    """Everything one training run needs. ``promote_guesses`` converts the
    assigned guesses into extra real steps (the matched-computation arm)."""

    dataset: FederatedDataset
    model: Model
    budgets: BudgetModel
    guess_policy: GuessPolicy = field(default_factory=lambda: GuessPolicy.fixed_count(0))
    clients_per_round: int = 20
    batch_size: int = 5
    promote_guesses: bool = False
    target_accuracy: float | None = None
    max_rounds: int = 100
    master_seed: int = 0
    max_workers: int | None = None

    def __post_init__(self):
        if self.clients_per_round > self.dataset.num_clients:
            raise ValueError(
                f"clients_per_round {self.clients_per_round} exceeds pool "
                f"of {self.dataset.num_clients}"
            )
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.target_accuracy is not None and not (0.0 < self.target_accuracy < 1.0):
            raise ValueError("target_accuracy must lie in (0, 1)")


@dataclass
class TrainResult:
    records: list[RoundRecord]
    final_params: ParameterVector
    target_accuracy: float | None
    target_round: int | None

    @property
    def target_reached(self) -> bool:
        return self.target_round is not None


def select_clients(pool_size: int, k: int, stream: RngStream) -> np.ndarray:
    """K distinct client ids, uniform without replacement."""
    if k > pool_size:
        raise ValueError(f"cannot select {k} clients from a pool of {pool_size}")
    return stream.gen.choice(pool_size, size=k, replace=False)


def assign_guesses(policy: GuessPolicy, budget: int) -> int:
    """Resolve the guess count for a client with ``budget`` real steps.

    Percentages round half away from zero: 25% of 8 is 2, 125% of 4 is 5.
    """
    if policy.kind == "fixed":
        return int(policy.value)
    return int(policy.value / 100.0 * budget + 0.5)


def client_update(
    params: ParameterVector,
    shard,
    plan: ClientPlan,
    model: Model,
    stream: RngStream,
) -> tuple[ParameterVector, int]:
    """Stateless local training: ``budget`` real Adam steps, then ``guesses``
    steps reusing the last computed gradient. Returns the updated model and
    the number of gradient evaluations performed (exactly ``plan.budget``)."""
    state = AdamState.fresh(len(params))
    w = params.copy()
    last_grad: np.ndarray | None = None
    evals = 0

    for _ in range(plan.budget):
        batch = sample_batch(shard, plan.batch_size, stream)
        _, grad = model.loss_grad(w, batch)
        evals += 1
        delta_w, state = adam_gradient_step(state, grad.values)
        w = ParameterVector(w.values + delta_w, w.layout)
        last_grad = grad.values

    for _ in range(plan.guesses):
        delta_w, state = adam_gradient_step(state, last_grad)
        w = ParameterVector(w.values + delta_w, w.layout)

    return w, evals


def aggregate(models: list[ParameterVector]) -> ParameterVector:
    """Plain (unweighted) elementwise mean; summation order is the list order."""
    if not models:
        raise ValueError("nothing to aggregate")
    layout = models[0].layout
    total = np.zeros_like(models[0].values)
    for pv in models:
        if pv.layout != layout:
            raise ValueError("parameter layouts differ; models are not combinable")
        total += pv.values
    return ParameterVector(total / len(models), layout)


def _build_plans(config: TrainConfig, selected: np.ndarray, budgets: np.ndarray) -> list[ClientPlan]:
    plans = []
    for cid, u in zip(selected, budgets):
        g = assign_guesses(config.guess_policy, int(u))
        if config.promote_guesses:
            plans.append(ClientPlan(int(cid), int(u) + g, 0, config.batch_size))
        else:
            plans.append(ClientPlan(int(cid), int(u), g, config.batch_size))
    return plans


class _LockedCounter(CountingModel):
    """CountingModel safe to share across the client thread pool."""

    def __init__(self, inner: Model):
        super().__init__(inner)
        self._lock = Lock()

    def loss_grad(self, params, batch):
        with self._lock:
            self.loss_grad_calls += 1
        return self.inner.loss_grad(params, batch)


def run_training(config: TrainConfig) -> TrainResult:
    """Run the federated round loop until the target accuracy is reached or
    ``max_rounds`` elapse. Failing to reach the target is a flagged outcome,
    not an error."""
    dataset = config.dataset
    model = _LockedCounter(config.model)
    params = config.model.init_params(seeded_stream(config.master_seed, "init"))

    # The round loop evaluates on the same pooled splits every time; shard
    # concatenation is hoisted out of the loop.
    test_x, test_y = dataset.pooled("test")
    train_x, train_y = dataset.pooled("train")

    records: list[RoundRecord] = []
    target_round: int | None = None
    cum_guesses = 0

    pool = (
        ThreadPoolExecutor(max_workers=config.max_workers)
        if config.max_workers and config.max_workers > 1
        else None
    )
    try:
        for t in range(config.max_rounds):
            selected = select_clients(
                dataset.num_clients,
                config.clients_per_round,
                seeded_stream(config.master_seed, f"select/{t}"),
            )
            budgets = config.budgets.sample(
                len(selected), seeded_stream(config.master_seed, f"budget/{t}")
            )
            plans = _build_plans(config, selected, budgets)

            broadcast = params

            def run_one(plan: ClientPlan):
                stream = seeded_stream(config.master_seed, f"client/{t}/{plan.client_id}")
                updated, _ = client_update(
                    broadcast, dataset.shards[plan.client_id], plan, model, stream
                )
                return plan.client_id, updated

            if pool is not None:
                results = list(pool.map(run_one, plans))
            else:
                results = [run_one(plan) for plan in plans]

            # Fixed ascending-id order keeps float summation bit-deterministic
            # regardless of thread completion order.
            results.sort(key=lambda item: item[0])
            params = aggregate([updated for _, updated in results])

            cum_guesses += sum(plan.guesses for plan in plans)
            pred = np.argmax(config.model.logits(params, test_x), axis=1)
            acc = float((pred == test_y).mean())
            train_probs = _softmax_rows(config.model.logits(params, train_x))
            loss = _cross_entropy(train_probs, train_y)
            records.append(
                RoundRecord(
                    round_index=t + 1,
                    selected=tuple(int(c) for c in selected),
                    budgets=tuple(plan.budget for plan in plans),
                    guesses=tuple(plan.guesses for plan in plans),
                    test_accuracy=acc,
                    train_loss=loss,
                    grad_evals=model.loss_grad_calls,
                    guessed_steps=cum_guesses,
                )
            )

            if config.target_accuracy is not None and acc >= config.target_accuracy:
                target_round = t + 1
                break
    finally:
        if pool is not None:
            pool.shutdown()

    return TrainResult(
        records=records,
        final_params=params,
        target_accuracy=config.target_accuracy,
        target_round=target_round,
    )


def save_checkpoint(path, params: ParameterVector, round_index: int) -> None:
    """Serialize the global model and round index as JSON (exact float repr)."""
    payload = {
        "round": round_index,
        "layout": [[name, list(shape)] for name, shape in params.layout],
        "values": params.values.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[ParameterVector, int]:
    with open(Path(path)) as fh:
        payload = json.load(fh)
    layout = tuple((name, tuple(shape)) for name, shape in payload["layout"])
    params = ParameterVector(np.array(payload["values"], dtype=np.float64), layout)
    return params, int(payload["round"])
