import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehr_spotlight.errors import ContractError, DimensionError
from ehr_spotlight.numeric import (
    GradTape,
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    gather_rows,
    matmul,
    mul,
    no_grad,
    reduce_sum,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    tanh_act,
)


def test_tensor_rejects_more_than_four_axes():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


def test_grad_shape_matches_data_after_backward():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    with GradTape():
        loss = reduce_sum(mul(x, x))
        backward(loss)
    assert x.grad.shape == x.data.shape


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(eye, a).data, a.data)


def test_matmul_hand_dot_product():
    # 1*3 + 2*4 = 11
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_zeros_annihilate():
    out = matmul(Tensor(np.zeros((2, 3))), Tensor(np.arange(6.0).reshape(3, 2)))
    assert np.array_equal(out.data, np.zeros((2, 2)))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_relu_values():
    out = relu(Tensor([-1.0, 0.0, 2.0]))
    assert out.data.tolist() == [0.0, 0.0, 2.0]


def test_sigmoid_and_tanh_at_zero():
    assert sigmoid(Tensor([0.0])).data[0] == pytest.approx(0.5)
    assert tanh_act(Tensor([0.0])).data[0] == 0.0


def test_sigmoid_log3():
    # 3 / (1 + 3) by direct evaluation
    assert sigmoid(Tensor([math.log(3.0)])).data[0] == pytest.approx(0.75, abs=1e-12)


def test_sigmoid_extreme_inputs_stay_finite():
    out = sigmoid(Tensor([-1000.0, 1000.0]))
    assert np.all(np.isfinite(out.data))
    assert out.data[0] == pytest.approx(0.0, abs=1e-300)
    assert out.data[1] == pytest.approx(1.0)


def test_softmax_uniform():
    out = softmax(Tensor([0.0, 0.0, 0.0, 0.0]))
    assert np.allclose(out.data, 0.25)


def test_softmax_log3():
    out = softmax(Tensor([0.0, math.log(3.0)]))
    assert np.allclose(out.data, [0.25, 0.75], atol=1e-12)


def test_softmax_overflow_safe():
    out = softmax(Tensor([1000.0, 1000.0]))
    assert np.allclose(out.data, [0.5, 0.5])


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-30, 30))
@settings(max_examples=60, deadline=None)
def test_softmax_sums_to_one_and_shift_invariant(values, shift):
    p = softmax(Tensor(values)).data
    assert abs(p.sum() - 1.0) < 1e-6
    assert np.all(p > 0)
    shifted = softmax(Tensor([v + shift for v in values])).data
    assert np.max(np.abs(p - shifted)) < 1e-9


def test_cross_entropy_uniform():
    probs = Tensor([0.25, 0.25, 0.25, 0.25])
    assert cross_entropy(probs, 2).item() == pytest.approx(math.log(4.0))


def test_cross_entropy_one_hot_correct():
    assert cross_entropy(Tensor([0.0, 1.0]), 1).item() == pytest.approx(0.0)


def test_cross_entropy_hand_value():
    assert cross_entropy(Tensor([0.9, 0.1]), 1).item() == pytest.approx(-math.log(0.1))


def test_cross_entropy_label_out_of_range():
    with pytest.raises(IndexError):
        cross_entropy(Tensor([0.5, 0.5]), 2)


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    with GradTape():
        loss = mul(x, x)
        backward(loss)
    assert x.grad == pytest.approx(6.0)


def test_backward_matmul_sum():
    # d/dA sum(A @ B) = ones @ B^T, by hand differentiation
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    b = Tensor(np.arange(12.0).reshape(3, 4))
    with GradTape():
        loss = reduce_sum(matmul(a, b))
        backward(loss)
    expected = np.ones((2, 4)) @ b.data.T
    assert np.allclose(a.grad, expected)


def test_backward_constant_loss_gives_zero_grads():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape():
        loss = scale(reduce_sum(x), 0.0)
        backward(loss)
    assert np.array_equal(x.grad, np.zeros(2))


def test_backward_accumulates_at_fanout():
    x = Tensor(2.0, requires_grad=True)
    with GradTape():
        loss = add(mul(x, x), x)  # x^2 + x -> 2x + 1 = 5
        backward(loss)
    assert x.grad == pytest.approx(5.0)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape():
        y = mul(x, x)
        with pytest.raises(ContractError):
            backward(y)


def test_backward_without_tape_rejected():
    x = Tensor(1.0, requires_grad=True)
    y = mul(x, x)  # not inside a tape
    with pytest.raises(ContractError):
        backward(y)


def test_tape_consumed_after_backward():
    x = Tensor(1.0, requires_grad=True)
    with GradTape():
        y = mul(x, x)
        backward(y)
        with pytest.raises(ContractError):
            backward(y)


def test_nested_tapes_rejected():
    with GradTape():
        with pytest.raises(ContractError):
            with GradTape():
                pass


def test_no_grad_blocks_recording():
    x = Tensor(1.0, requires_grad=True)
    with GradTape() as tape:
        with no_grad():
            mul(x, x)
        assert len(tape) == 0


def test_concat_and_take_roundtrip_gradient():
    a = Tensor(np.ones((1, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 3)), requires_grad=True)
    with GradTape():
        joined = concat([a, b], axis=1)
        loss = reduce_sum(mul(joined[:, 2:5], Tensor([[1.0, 2.0, 3.0]])))
        backward(loss)
    assert np.allclose(a.grad, [[0.0, 0.0]])
    assert np.allclose(b.grad, [[1.0, 2.0, 3.0]])


def test_gather_rows_accumulates_repeated_indices():
    table = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    with GradTape():
        rows = gather_rows(table, [1, 1, 2])
        loss = reduce_sum(rows)
        backward(loss)
    assert np.allclose(table.grad, [[0.0, 0.0], [2.0, 2.0], [1.0, 1.0]])


def test_gather_rows_index_out_of_range():
    with pytest.raises(IndexError):
        gather_rows(Tensor(np.zeros((3, 2))), [3])


def test_reshape_backward():
    x = Tensor(np.arange(6.0), requires_grad=True)
    with GradTape():
        loss = reduce_sum(mul(reshape(x, (2, 3)), Tensor(np.full((2, 3), 2.0))))
        backward(loss)
    assert np.allclose(x.grad, np.full(6, 2.0))
