"""Tape mechanics and reverse-mode gradients."""
import numpy as np
import pytest

from mambauie import ops
from mambauie.tensor import Tape, Tensor, backward, no_grad, record


def test_grad_of_sum_is_ones():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 3)),
               requires_grad=True)
    with record() as tape:
        loss = ops.sum_all(x)
        backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


def test_grad_of_sum_of_squares():
    x = Tensor(np.random.default_rng(1).standard_normal((4,)),
               requires_grad=True)
    with record() as tape:
        loss = ops.sum_all(ops.mul(x, x))
        backward(tape, loss)
    np.testing.assert_allclose(x.grad, 2 * x.data, rtol=1e-6)


def test_fanout_accumulates():
    x = Tensor(np.ones(3), requires_grad=True)
    with record() as tape:
        y = ops.add(x, x)       # dy/dx contributes twice
        loss = ops.sum_all(y)
        backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.full(3, 2.0))


def test_repeated_backward_accumulates_on_leaf():
    x = Tensor(np.ones(2), requires_grad=True)
    for _ in range(2):
        with record() as tape:
            backward(tape, ops.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.full(2, 2.0))
    x.zero_grad()
    assert x.grad is None


def test_non_scalar_loss_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with record() as tape:
        y = ops.mul(x, x)
        with pytest.raises(ValueError):
            backward(tape, y)


def test_loss_off_tape_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with record() as tape:
        loss = ops.sum_all(x)
        backward(tape, loss)
    other = Tape()
    with pytest.raises(ValueError):
        backward(other, loss)


def test_tape_cleared_after_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    with record() as tape:
        loss = ops.sum_all(ops.mul(x, x))
        backward(tape, loss)
    assert len(tape) == 0


def test_no_grad_suppresses_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    with record() as tape:
        with no_grad():
            y = ops.mul(x, x)
        assert not y.requires_grad
        assert len(tape) == 0


def test_untracked_ops_outside_record():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ops.mul(x, x)
    assert not y.requires_grad


def test_grad_only_on_flagged_leaves():
    x = Tensor(np.ones(3), requires_grad=True)
    c = Tensor(np.full(3, 2.0))  # constant
    with record() as tape:
        loss = ops.sum_all(ops.mul(x, c))
        backward(tape, loss)
    np.testing.assert_array_equal(x.grad, c.data)
    assert c.grad is None


def test_chain_through_composite_expression():
    # loss = sum((2x + 3)^2) -> dloss/dx = 2 * (2x + 3) * 2
    x = Tensor(np.array([1.0, -0.5]), requires_grad=True)
    two = Tensor(np.full(2, 2.0))
    three = Tensor(np.full(2, 3.0))
    with record() as tape:
        y = ops.add(ops.mul(two, x), three)
        loss = ops.sum_all(ops.mul(y, y))
        backward(tape, loss)
    np.testing.assert_allclose(x.grad, 4 * (2 * x.data + 3), rtol=1e-6)
