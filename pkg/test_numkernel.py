#!/usr/bin/env python3
"""
Test script for the dense kernel: op shapes, masked softmax and gradients
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from numkernel import (
    Tape,
    Tensor,
    backward,
    concat,
    embedding,
    gelu,
    layer_norm,
    linear,
    matmul,
    mse,
    mul,
    slice_axis,
    softmax_masked,
    sum_all,
    transpose,
)
from numkernel.gradcheck import check_gradients
from policy.errors import ContractError, DegenerateRowError, ShapeError


def test_matmul_rejects_mismatched_shapes():
    """matmul names both shapes when the inner dims differ."""
    print("🧪 Testing matmul shape errors")
    with pytest.raises(ShapeError) as err:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


def test_softmax_masked_rows():
    """Visible cells sum to one per row; blocked cells are exactly zero."""
    print("🧪 Testing masked softmax rows")
    rng = np.random.default_rng(0)
    visible = np.array([[1, 0, 0], [1, 1, 0], [1, 1, 1]], dtype=bool)
    probs = softmax_masked(Tensor(rng.normal(0, 20, size=(4, 3, 3))), visible).data
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(probs[:, ~visible] == 0.0)
    # a single visible cell takes all the mass
    assert np.all(probs[:, 0, 0] == 1.0)


def test_softmax_masked_blocked_row_raises():
    print("🧪 Testing fully blocked softmax row")
    visible = np.array([[1, 1], [0, 0]], dtype=bool)
    with pytest.raises(DegenerateRowError):
        softmax_masked(Tensor(np.zeros((2, 2))), visible)


def test_backward_needs_scalar_loss():
    print("🧪 Testing backward on a non-scalar")
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = mul(a, a)
    with pytest.raises(ContractError):
        backward(tape, y)


def test_reused_leaf_accumulates():
    """d/da sum(a * a) = 2a when `a` feeds both inputs."""
    print("🧪 Testing gradient accumulation")
    a = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(mul(a, a))
    backward(tape, loss)
    np.testing.assert_allclose(a.grad, [2.0, -4.0, 6.0])


def test_nothing_recorded_outside_a_tape():
    print("🧪 Testing tape scoping")
    a = Tensor(np.ones(3), requires_grad=True)
    y = mul(a, a)
    with Tape() as tape:
        z = sum_all(Tensor(np.ones(3)))
    assert len(tape) == 0
    assert not z.requires_grad
    assert y.grad is None


def test_op_gradients_match_finite_differences():
    print("🧪 Testing op gradients against central differences")
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(2, 4, 3)))
    w = Tensor(rng.normal(size=(3, 6)))
    b = Tensor(rng.normal(size=6))
    gain = Tensor(rng.normal(size=6))
    bias = Tensor(rng.normal(size=6))
    table = Tensor(rng.normal(size=(5, 6)))
    target = rng.normal(size=(2, 4, 4))
    visible = np.tril(np.ones((4, 4), dtype=bool))
    idx = np.array([[0, 3, 3, 1], [4, 2, 0, 0]])

    def loss_fn():
        h = layer_norm(gelu(linear(x, w, b)), gain, bias)
        h = concat([slice_axis(h, 0, 3, axis=-1), slice_axis(h, 3, 6, axis=-1)], axis=-1)
        h = mul(h, embedding(table, idx))
        scores = softmax_masked(matmul(h, transpose(h)), visible)
        return mse(scores, target)

    report = check_gradients(loss_fn, {"x": x, "w": w, "b": b, "gain": gain, "bias": bias, "table": table})
    print(f"📊 Worst relative error: {report.max_error:.2e}")
    assert report.passed, report.worst


def main():
    """Run all numkernel tests."""
    print("🚀 numkernel tests")
    print("=" * 60)
    tests = [
        test_matmul_rejects_mismatched_shapes,
        test_softmax_masked_rows,
        test_softmax_masked_blocked_row_raises,
        test_backward_needs_scalar_loss,
        test_reused_leaf_accumulates,
        test_nothing_recorded_outside_a_tape,
        test_op_gradients_match_finite_differences,
    ]
    for test in tests:
        test()
        print(f"✅ {test.__name__}")
    print("🏁 All numkernel tests passed")


if __name__ == "__main__":
    main()
