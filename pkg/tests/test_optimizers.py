"""Optimizer step rules, checked against closed forms and a naive re-derivation."""

import math

import numpy as np
import pytest

from fedgel.optimizers import (
    AdamState,
    MomentumState,
    RmsPropState,
    adam_gradient_step,
    momentum_step,
    rmsprop_step,
    sgd_step,
)


def naive_adam_updates(grads, alpha=0.9, beta=0.999, eps=0.001, delta=1e-8):
    """Scalar-at-a-time Adam in plain Python floats, written from the update
    equations rather than shared code. Serves as the independent oracle."""
    dim = len(grads[0])
    v1 = [0.0] * dim
    v2 = [0.0] * dim
    updates = []
    for t, g in enumerate(grads, start=1):
        step = []
        for i in range(dim):
            v1[i] = alpha * v1[i] + (1.0 - alpha) * g[i]
            v2[i] = beta * v2[i] + (1.0 - beta) * (g[i] * g[i])
            v1_hat = v1[i] / (1.0 - alpha**t)
            v2_hat = v2[i] / (1.0 - beta**t)
            step.append(-eps * v1_hat / (math.sqrt(v2_hat) + delta))
        updates.append(step)
    return updates


class TestAdamClosedForms:
    def test_first_step_scalar(self):
        """On the first call the bias corrections cancel the decay factors,
        leaving delta_w = -eps * g / (|g| + delta)."""
        grad = np.array([0.5])
        delta_w, state = adam_gradient_step(AdamState.fresh(1), grad)
        closed = -0.001 * 0.5 / (0.5 + 1e-8)
        assert abs(delta_w[0] - closed) <= 1e-12
        assert state.t == 1

    def test_constant_gradient_fixed_point(self):
        """Feeding the same gradient keeps every step at the first-step value;
        the moments track the constant exactly after bias correction."""
        grad = np.array([0.5, -2.0, 0.03])
        want = -0.001 * grad / (np.abs(grad) + 1e-8)
        state = AdamState.fresh(3)
        for _ in range(50):
            delta_w, state = adam_gradient_step(state, grad)
            np.testing.assert_allclose(delta_w, want, rtol=0, atol=1e-12)
        assert state.t == 50

    def test_two_coordinates_normalize_independently(self):
        """Adam is per-coordinate: a 100x smaller gradient component still
        moves by roughly eps on the first step, unlike any scalar rescaling
        of the gradient vector."""
        delta_w, _ = adam_gradient_step(AdamState.fresh(2), np.array([1.0, 0.01]))
        assert abs(abs(delta_w[0]) - 0.001) < 1e-8
        assert abs(abs(delta_w[1]) - 0.001) < 1e-6
        assert delta_w[0] < 0 and delta_w[1] < 0


class TestAdamAgainstNaiveOracle:
    def test_random_gradient_sequences_match_bitwise(self):
        """100 steps on random gradients agree with the scalar re-derivation
        to the last bit (same IEEE operations in the same order)."""
        rng = np.random.default_rng(7)
        grads = [rng.normal(size=7) for _ in range(100)]
        oracle = naive_adam_updates([[float(x) for x in g] for g in grads])
        state = AdamState.fresh(7)
        for grad, want in zip(grads, oracle):
            delta_w, state = adam_gradient_step(state, grad)
            assert np.array_equal(delta_w, np.array(want))

    def test_nondefault_hyperparameters(self):
        rng = np.random.default_rng(11)
        grads = [rng.normal(size=3) for _ in range(40)]
        hyper = dict(alpha=0.5, beta=0.9, eps=0.01, delta=1e-6)
        oracle = naive_adam_updates([[float(x) for x in g] for g in grads], **hyper)
        state = AdamState.fresh(3, alpha=0.5, beta=0.9, epsilon=0.01, delta=1e-6)
        for grad, want in zip(grads, oracle):
            delta_w, state = adam_gradient_step(state, grad)
            assert np.array_equal(delta_w, np.array(want))


class TestAdamState:
    def test_defaults(self):
        state = AdamState.fresh(4)
        assert (state.alpha, state.beta) == (0.9, 0.999)
        assert (state.epsilon, state.delta) == (0.001, 1e-8)
        assert state.t == 0
        assert np.all(state.v1 == 0.0) and np.all(state.v2 == 0.0)

    def test_step_counter_advances_and_input_state_is_untouched(self):
        s0 = AdamState.fresh(2)
        _, s1 = adam_gradient_step(s0, np.ones(2))
        _, s2 = adam_gradient_step(s1, np.ones(2))
        assert (s0.t, s1.t, s2.t) == (0, 1, 2)
        assert np.all(s0.v1 == 0.0)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            adam_gradient_step(AdamState.fresh(3), np.ones(4))


class TestOtherRules:
    def test_sgd_is_scaled_negative_gradient(self):
        grad = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(sgd_step(grad, 0.1), -0.1 * grad)
        with pytest.raises(ValueError):
            sgd_step(grad, 0.0)

    def test_momentum_constant_gradient_closed_form(self):
        """v_t = -eps * g * (1 - alpha^t) / (1 - alpha) for a constant gradient."""
        grad = np.array([1.0, -0.25])
        state = MomentumState.fresh(2)
        for t in range(1, 31):
            v, state = momentum_step(state, grad)
            want = -0.001 * grad * (1 - 0.9**t) / (1 - 0.9)
            np.testing.assert_allclose(v, want, rtol=0, atol=1e-12)

    def test_momentum_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            momentum_step(MomentumState.fresh(2), np.ones(3))

    def test_rmsprop_first_step(self):
        """First step: v2 = (1-beta) g^2, so
        delta_w = -eps * g / (sqrt(1-beta) |g| + delta)."""
        grad = np.array([2.0, -0.5])
        delta_w, state = rmsprop_step(RmsPropState.fresh(2), grad)
        want = -0.001 * grad / (np.sqrt((1 - 0.999) * grad * grad) + 1e-8)
        np.testing.assert_allclose(delta_w, want, rtol=1e-15, atol=0)
        np.testing.assert_allclose(state.v2, (1 - 0.999) * grad * grad, rtol=1e-15, atol=0)

    def test_rmsprop_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            rmsprop_step(RmsPropState.fresh(2), np.ones(5))
