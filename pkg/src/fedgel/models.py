"""Differentiable models with analytic loss/gradient.

Two models are provided: multinomial logistic regression (softmax
cross-entropy over a single linear layer) and a small one-hidden-layer tanh
MLP for non-convex objectives. Both expose ``loss_grad`` returning the mean
cross-entropy over a batch together with the full analytic gradient, packed
as a flat :class:`ParameterVector`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numeric import RngStream

__all__ = [
    "ParameterVector",
    "Batch",
    "ClientShard",
    "LogisticModel",
    "TanhMlp",
    "CountingModel",
    "build_model",
    "logreg_loss_grad",
    "mlp_loss_grad",
    "accuracy",
    "pooled_loss",
    "finite_diff_grad",
]

Layout = tuple[tuple[str, tuple[int, ...]], ...]


@dataclass(frozen=True)
class ParameterVector:
    """Flat float64 model weights plus the layout needed to unflatten them.

    Two ParameterVectors are combinable (added, averaged) only when their
    layouts are identical.
    """

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        expected = sum(math.prod(shape) for _, shape in self.layout)
        if self.values.shape != (expected,):
            raise ValueError(
                f"layout wants {expected} values, got shape {self.values.shape}"
            )

    @classmethod
    def zeros(cls, layout: Layout) -> "ParameterVector":
        total = sum(math.prod(shape) for _, shape in layout)
        return cls(np.zeros(total), tuple(layout))

    def view(self, name: str) -> np.ndarray:
        """Reshaped view (no copy) of one named block of the flat vector."""
        offset = 0
        for block, shape in self.layout:
            size = math.prod(shape)
            if block == name:
                return self.values[offset : offset + size].reshape(shape)
            offset += size
        raise KeyError(name)

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def __add__(self, other: "ParameterVector") -> "ParameterVector":
        if self.layout != other.layout:
            raise ValueError("parameter layouts differ; vectors are not combinable")
        return ParameterVector(self.values + other.values, self.layout)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Batch:
    """A mini-batch of training rows: features (B, d) and integer labels (B,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be (B, d) with B >= 1, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one class index per feature row")


@dataclass
class ClientShard:
    """One client's local dataset with a train/test index partition."""

    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("shard must hold at least one sample")
        if self.labels.shape != (n,):
            raise ValueError("labels must match feature rows")

    @classmethod
    def with_holdout(cls, features, labels, train_fraction: float = 0.8) -> "ClientShard":
        """Split the first ceil(fraction * n) rows into train, the rest into test."""
        n = features.shape[0]
        n_train = max(1, math.ceil(train_fraction * n))
        idx = np.arange(n)
        return cls(
            features=np.asarray(features, dtype=np.float64),
            labels=np.asarray(labels, dtype=np.int64),
            train_idx=idx[:n_train],
            test_idx=idx[n_train:],
        )

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        idx = {"train": self.train_idx, "test": self.test_idx}[which]
        return self.features[idx], self.labels[idx]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def _cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    rows = np.arange(labels.shape[0])
    return float(-np.log(probs[rows, labels]).mean())


class LogisticModel:
    """Multinomial logistic regression: softmax over one linear layer."""

    def __init__(self, feature_dim: int, num_classes: int):
        if feature_dim < 1 or num_classes < 2:
            raise ValueError("need feature_dim >= 1 and num_classes >= 2")
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.layout: Layout = (
            ("W", (feature_dim, num_classes)),
            ("b", (num_classes,)),
        )

    def init_params(self, stream: RngStream) -> ParameterVector:
        """Weights ~ N(0, 1/sqrt(fan_in)), biases zero."""
        params = ParameterVector.zeros(self.layout)
        std = 1.0 / math.sqrt(self.feature_dim)
        params.view("W")[:] = stream.gen.normal(0.0, std, size=(self.feature_dim, self.num_classes))
        return params

    def logits(self, params: ParameterVector, features: np.ndarray) -> np.ndarray:
        return features @ params.view("W") + params.view("b")

    def loss_grad(self, params: ParameterVector, batch: Batch) -> tuple[float, ParameterVector]:
        self._check_batch(batch)
        probs = _softmax_rows(self.logits(params, batch.features))
        loss = _cross_entropy(probs, batch.labels)
        n = batch.labels.shape[0]
        probs[np.arange(n), batch.labels] -= 1.0
        probs /= n
        grad_w = batch.features.T @ probs
        grad_b = probs.sum(axis=0)
        return loss, ParameterVector(np.concatenate((grad_w.ravel(), grad_b)), self.layout)

    def _check_batch(self, batch: Batch):
        if batch.features.shape[1] != self.feature_dim:
            raise ValueError(
                f"batch feature dim {batch.features.shape[1]} != model dim {self.feature_dim}"
            )


class TanhMlp:
    """One hidden tanh layer followed by a softmax output layer."""

    def __init__(self, feature_dim: int, num_classes: int, hidden: int = 20):
        if feature_dim < 1 or num_classes < 2 or hidden < 1:
            raise ValueError("need feature_dim >= 1, num_classes >= 2, hidden >= 1")
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.hidden = hidden
        self.layout: Layout = (
            ("W1", (feature_dim, hidden)),
            ("b1", (hidden,)),
            ("W2", (hidden, num_classes)),
            ("b2", (num_classes,)),
        )

    def init_params(self, stream: RngStream) -> ParameterVector:
        """Weights ~ N(0, 1/sqrt(fan_in)) per layer, biases zero."""
        params = ParameterVector.zeros(self.layout)
        params.view("W1")[:] = stream.gen.normal(
            0.0, 1.0 / math.sqrt(self.feature_dim), size=(self.feature_dim, self.hidden)
        )
        params.view("W2")[:] = stream.gen.normal(
            0.0, 1.0 / math.sqrt(self.hidden), size=(self.hidden, self.num_classes)
        )
        return params

    def logits(self, params: ParameterVector, features: np.ndarray) -> np.ndarray:
        h = np.tanh(features @ params.view("W1") + params.view("b1"))
        return h @ params.view("W2") + params.view("b2")

    def loss_grad(self, params: ParameterVector, batch: Batch) -> tuple[float, ParameterVector]:
        if batch.features.shape[1] != self.feature_dim:
            raise ValueError(
                f"batch feature dim {batch.features.shape[1]} != model dim {self.feature_dim}"
            )
        h = np.tanh(batch.features @ params.view("W1") + params.view("b1"))
        probs = _softmax_rows(h @ params.view("W2") + params.view("b2"))
        loss = _cross_entropy(probs, batch.labels)

        n = batch.labels.shape[0]
        dlogits = probs
        dlogits[np.arange(n), batch.labels] -= 1.0
        dlogits /= n
        dh = dlogits @ params.view("W2").T
        dz = dh * (1.0 - h * h)

        grad = np.concatenate(
            (
                (batch.features.T @ dz).ravel(),
                dz.sum(axis=0),
                (h.T @ dlogits).ravel(),
                dlogits.sum(axis=0),
            )
        )
        return loss, ParameterVector(grad, self.layout)


Model = LogisticModel | TanhMlp


class CountingModel:
    """Wraps a model and counts loss/gradient evaluations.

    Prediction paths (``logits``) are deliberately not counted: only calls
    that compute a gradient touch the counter, so the counter is the ground
    truth for the gradient-evaluation ledger.
    """

    def __init__(self, inner: Model):
        self.inner = inner
        self.loss_grad_calls = 0

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def loss_grad(self, params: ParameterVector, batch: Batch):
        self.loss_grad_calls += 1
        return self.inner.loss_grad(params, batch)


def build_model(name: str, feature_dim: int, num_classes: int, hidden: int = 20) -> Model:
    """Construct a model by id: ``logreg`` or ``mlp``."""
    if name == "logreg":
        return LogisticModel(feature_dim, num_classes)
    if name == "mlp":
        return TanhMlp(feature_dim, num_classes, hidden=hidden)
    raise ValueError(f"unknown model id {name!r} (expected 'logreg' or 'mlp')")


def logreg_loss_grad(params: ParameterVector, batch: Batch) -> tuple[float, ParameterVector]:
    """Softmax cross-entropy loss and analytic gradient for a linear model."""
    d, c = dict(params.layout)["W"]
    return LogisticModel(d, c).loss_grad(params, batch)


def mlp_loss_grad(
    params: ParameterVector, batch: Batch, hidden: int = 20
) -> tuple[float, ParameterVector]:
    """Loss and analytic gradient for the one-hidden-layer tanh MLP."""
    d, h = dict(params.layout)["W1"]
    _, c = dict(params.layout)["W2"]
    if h != hidden:
        raise ValueError(f"params built for hidden={h}, got hidden={hidden}")
    return TanhMlp(d, c, hidden=hidden).loss_grad(params, batch)


def accuracy(model: Model, params: ParameterVector, shards, split: str = "test") -> float:
    """Fraction of correctly argmax-classified samples pooled over all shards.

    Ties are broken toward the lowest class index. Raises if the selected
    split is empty across every shard.
    """
    correct = 0
    total = 0
    for shard in shards:
        features, labels = shard.split(split)
        if features.shape[0] == 0:
            continue
        pred = np.argmax(model.logits(params, features), axis=1)
        correct += int((pred == labels).sum())
        total += labels.shape[0]
    if total == 0:
        raise ValueError(f"no samples in split {split!r} across the given shards")
    return correct / total


def pooled_loss(model: Model, params: ParameterVector, shards, split: str = "train") -> float:
    """Mean cross-entropy over all samples of the split, pooled across shards."""
    total_loss = 0.0
    total = 0
    for shard in shards:
        features, labels = shard.split(split)
        if features.shape[0] == 0:
            continue
        probs = _softmax_rows(model.logits(params, features))
        rows = np.arange(labels.shape[0])
        total_loss += float(-np.log(probs[rows, labels]).sum())
        total += labels.shape[0]
    if total == 0:
        raise ValueError(f"no samples in split {split!r} across the given shards")
    return total_loss / total


def finite_diff_grad(model: Model, params: ParameterVector, batch: Batch, h: float = 1e-5) -> ParameterVector:
    """Central-difference gradient oracle: (l(w + h e_i) - l(w - h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("h must be positive")
    grad = np.zeros_like(params.values)
    work = params.copy()
    for i in range(len(work)):
        original = work.values[i]
        work.values[i] = original + h
        plus, _ = model.loss_grad(work, batch)
        work.values[i] = original - h
        minus, _ = model.loss_grad(work, batch)
        work.values[i] = original
        grad[i] = (plus - minus) / (2.0 * h)
    return ParameterVector(grad, params.layout)
