"""
Tests for AdamW and the warmup/decay learning-rate schedule.
"""
import numpy as np
import pytest

from hilat.errors import NonFiniteError, UsageError
from hilat.optim import BETA1, BETA2, EPS, AdamWState, adamw_step, lr_schedule
from hilat.tensor import Tensor


class TestAdamW:

    def test_zero_grads_no_decay_unchanged(self):
        theta = Tensor([[0.5, -2.0]], requires_grad=True)
        state = AdamWState()
        for _ in range(3):
            adamw_step({"t": theta}, state, 0.1, 0.0, grads={"t": np.zeros((1, 2))})
        np.testing.assert_array_equal(theta.data, [[0.5, -2.0]])

    def test_zero_grads_decay_shrinks(self):
        theta = Tensor([[1.0, -3.0]], requires_grad=True)
        state = AdamWState()
        lr, wd = 0.1, 0.5
        for _ in range(3):
            adamw_step({"t": theta}, state, lr, wd)
        np.testing.assert_allclose(theta.data, np.array([[1.0, -3.0]]) * (1 - lr * wd) ** 3, rtol=1e-12)
        assert state.step == 3

    def test_scalar_quadratic_matches_recursion(self):
        theta = Tensor([[1.0]], requires_grad=True)
        state = AdamWState()
        lr = 0.01
        for _ in range(500):
            adamw_step({"t": theta}, state, lr, 0.0, grads={"t": 2.0 * theta.data})

        # Oracle: the scalar recursion written out
        x, m, v = 1.0, 0.0, 0.0
        for t in range(1, 501):
            g = 2.0 * x
            m = BETA1 * m + (1 - BETA1) * g
            v = BETA2 * v + (1 - BETA2) * g * g
            x = x - lr * (m / (1 - BETA1 ** t)) / (np.sqrt(v / (1 - BETA2 ** t)) + EPS)

        assert abs(theta.item()) < 1e-3
        np.testing.assert_allclose(theta.item(), x, atol=1e-12)

    def test_frozen_untouched(self):
        live = Tensor([[1.0]], requires_grad=True)
        frozen = Tensor([[1.0]], requires_grad=False)
        frozen.grad = np.array([[5.0]])
        live.grad = np.array([[5.0]])
        adamw_step({"live": live, "frozen": frozen}, AdamWState(), 0.1, 0.1)
        assert frozen.item() == 1.0
        assert live.item() < 1.0

    def test_first_step_moves_by_lr(self):
        theta = Tensor([[0.0]], requires_grad=True)
        adamw_step({"t": theta}, AdamWState(), 0.01, 0.0, grads={"t": np.array([[3.0]])})
        np.testing.assert_allclose(theta.item(), -0.01, rtol=1e-6)

    def test_non_finite_gradient(self):
        a = Tensor([[1.0]], requires_grad=True)
        b = Tensor([[1.0]], requires_grad=True)
        state = AdamWState()
        with pytest.raises(NonFiniteError):
            adamw_step({"a": a, "b": b}, state, 0.1, 0.0, grads={"a": np.array([[0.1]]), "b": np.array([[np.nan]])})
        # nothing applied when any gradient is bad
        assert a.item() == 1.0 and state.step == 0

    def test_gradient_shape_mismatch(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        with pytest.raises(UsageError):
            adamw_step({"a": a}, AdamWState(), 0.1, 0.0, grads={"a": np.zeros((2, 1))})


class TestSchedule:

    def test_reference_points(self):
        assert lr_schedule(500, 500, 2500, 5e-5) == pytest.approx(5e-5)
        assert lr_schedule(2500, 500, 2500, 5e-5) == 0.0
        assert lr_schedule(250, 500, 2500, 5e-5) == pytest.approx(2.5e-5)
        assert lr_schedule(1500, 500, 2500, 5e-5) == pytest.approx(2.5e-5)

    def test_no_warmup(self):
        assert lr_schedule(1, 0, 10, 1.0) == pytest.approx(0.9)

    def test_range_and_continuity(self):
        values = [lr_schedule(t, 40, 400, 5e-3) for t in range(1, 401)]
        assert all(0.0 <= v <= 5e-3 for v in values)
        assert max(abs(a - b) for a, b in zip(values, values[1:])) <= 5e-3 / 40 + 1e-15

    @pytest.mark.parametrize("step", [0, 11])
    def test_out_of_range_step(self, step):
        with pytest.raises(UsageError):
            lr_schedule(step, 2, 10, 1.0)

    def test_warmup_exceeds_total(self):
        with pytest.raises(UsageError):
            lr_schedule(1, 20, 10, 1.0)
