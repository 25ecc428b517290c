"""First-order optimizers with a gradient-step API.

Each step function takes whatever gradient the caller supplies and returns
the model update ``delta_w`` (the caller applies ``w <- w + delta_w``). The
functions do not care whether the gradient was freshly computed or is being
reused as a proxy for an uncomputed one; that is exactly the hook the
federation layer uses for guessed steps.

Adam is the workhorse: first/second moments with bias correction, the step
counter advancing by one on every call (guessed steps included). The
stability constant is added after the square root, i.e. ``sqrt(v2_hat) +
delta``, not inside it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numeric import hadamard

__all__ = [
    "AdamState",
    "MomentumState",
    "RmsPropState",
    "adam_gradient_step",
    "sgd_step",
    "momentum_step",
    "rmsprop_step",
]


def _check_dims(state_vec: np.ndarray, grad: np.ndarray):
    if state_vec.shape != grad.shape:
        raise ValueError(f"gradient shape {grad.shape} != state shape {state_vec.shape}")


@dataclass(frozen=True)
class AdamState:
    """Adam moments and hyperparameters; ``t`` counts applied steps."""

    v1: np.ndarray
    v2: np.ndarray
    t: int = 0
    alpha: float = 0.9
    beta: float = 0.999
    epsilon: float = 0.001
    delta: float = 1e-8

    @classmethod
    def fresh(cls, dim: int, **hyper) -> "AdamState":
        return cls(v1=np.zeros(dim), v2=np.zeros(dim), t=0, **hyper)


@dataclass(frozen=True)
class MomentumState:
    """Velocity accumulator for SGD with momentum."""

    v: np.ndarray
    alpha: float = 0.9
    epsilon: float = 0.001

    @classmethod
    def fresh(cls, dim: int, **hyper) -> "MomentumState":
        return cls(v=np.zeros(dim), **hyper)


@dataclass(frozen=True)
class RmsPropState:
    """Running second moment for RMSProp."""

    v2: np.ndarray
    beta: float = 0.999
    epsilon: float = 0.001
    delta: float = 1e-8

    @classmethod
    def fresh(cls, dim: int, **hyper) -> "RmsPropState":
        return cls(v2=np.zeros(dim), **hyper)


def adam_gradient_step(state: AdamState, grad: np.ndarray) -> tuple[np.ndarray, AdamState]:
    """One Adam step: update moments, bias-correct, return the model update.

    The step counter is incremented before bias correction, so the first
    call runs with ``t = 1``.
    """
    _check_dims(state.v1, grad)
    t = state.t + 1
    v1 = state.alpha * state.v1 + (1.0 - state.alpha) * grad
    v2 = state.beta * state.v2 + (1.0 - state.beta) * (grad * grad)
    v1_hat = v1 / (1.0 - state.alpha**t)
    v2_hat = v2 / (1.0 - state.beta**t)
    delta_w = -state.epsilon * v1_hat / (np.sqrt(v2_hat) + state.delta)
    new_state = AdamState(
        v1=v1, v2=v2, t=t,
        alpha=state.alpha, beta=state.beta, epsilon=state.epsilon, delta=state.delta,
    )
    return delta_w, new_state


def sgd_step(grad: np.ndarray, epsilon: float) -> np.ndarray:
    """Plain SGD update: ``-epsilon * grad``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return -epsilon * np.asarray(grad, dtype=np.float64)


def momentum_step(state: MomentumState, grad: np.ndarray) -> tuple[np.ndarray, MomentumState]:
    """SGD with momentum: ``v <- alpha v - epsilon grad``; the update is the new v."""
    _check_dims(state.v, grad)
    v = state.alpha * state.v - state.epsilon * grad
    return v, replace(state, v=v)


def rmsprop_step(state: RmsPropState, grad: np.ndarray) -> tuple[np.ndarray, RmsPropState]:
    """RMSProp: refresh the squared-gradient moment, then scale the step by it."""
    _check_dims(state.v2, grad)
    v2 = state.beta * state.v2 + (1.0 - state.beta) * hadamard(grad, grad)
    delta_w = -(state.epsilon / (np.sqrt(v2) + state.delta)) * grad
    return delta_w, replace(state, v2=v2)
