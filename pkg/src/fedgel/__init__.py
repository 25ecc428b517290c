"""Deterministic federated-learning simulator where budget-limited clients
extend local Adam training with guessed steps that reuse the last computed
gradient, plus an experiment harness for paired-arm comparisons and budget
sweeps."""

__version__ = "0.1.0"

from .data import (
    BUDGET_PRESETS,
    FederatedDataset,
    budget_range_from_dataset,
    generate_synthetic,
    load_dataset,
    median_client_steps,
    partition_iid,
    sample_batch,
    save_dataset,
)
from .experiments import (
    ExperimentResult,
    PairedConfig,
    PairedResult,
    SweepConfig,
    SweepResult,
    TargetRule,
    compute_savings,
    rounds_to_target,
    run_paired,
    run_sweep,
    speedup,
)
from .federation import (
    BudgetModel,
    ClientPlan,
    GuessPolicy,
    RoundRecord,
    TrainConfig,
    TrainResult,
    aggregate,
    assign_guesses,
    client_update,
    load_checkpoint,
    run_training,
    save_checkpoint,
    select_clients,
)
from .models import (
    Batch,
    ClientShard,
    CountingModel,
    LogisticModel,
    ParameterVector,
    TanhMlp,
    accuracy,
    build_model,
    finite_diff_grad,
    logreg_loss_grad,
    mlp_loss_grad,
    pooled_loss,
)
from .numeric import RngStream, axpy, hadamard, sample_normal, seeded_stream
from .optimizers import (
    AdamState,
    MomentumState,
    RmsPropState,
    adam_gradient_step,
    momentum_step,
    rmsprop_step,
    sgd_step,
)

__all__ = [
    "__version__",
    "BUDGET_PRESETS",
    "FederatedDataset",
    "budget_range_from_dataset",
    "generate_synthetic",
    "load_dataset",
    "median_client_steps",
    "partition_iid",
    "sample_batch",
    "save_dataset",
    "ExperimentResult",
    "PairedConfig",
    "PairedResult",
    "SweepConfig",
    "SweepResult",
    "TargetRule",
    "compute_savings",
    "rounds_to_target",
    "run_paired",
    "run_sweep",
    "speedup",
    "BudgetModel",
    "ClientPlan",
    "GuessPolicy",
    "RoundRecord",
    "TrainConfig",
    "TrainResult",
    "aggregate",
    "assign_guesses",
    "client_update",
    "load_checkpoint",
    "run_training",
    "save_checkpoint",
    "select_clients",
    "Batch",
    "ClientShard",
    "CountingModel",
    "LogisticModel",
    "ParameterVector",
    "TanhMlp",
    "accuracy",
    "build_model",
    "finite_diff_grad",
    "logreg_loss_grad",
    "mlp_loss_grad",
    "pooled_loss",
    "RngStream",
    "axpy",
    "hadamard",
    "sample_normal",
    "seeded_stream",
    "AdamState",
    "MomentumState",
    "RmsPropState",
    "adam_gradient_step",
    "momentum_step",
    "rmsprop_step",
    "sgd_step",
]
