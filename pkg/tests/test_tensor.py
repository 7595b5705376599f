import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tagqa.core import tensor as T
from tagqa.core.gradcheck import finite_difference_check
from tagqa.core.tensor import GradientError, ShapeError, Tensor, no_grad


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    np.testing.assert_array_equal((eye @ eye).data, np.eye(2))


def test_matmul_hand_sum():
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\[2, 3\].*\[2, 3\]"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_sum_gradient_is_row_sums_of_b(rng):
    a, b = param(rng, 3, 4), param(rng, 4, 5)
    T.tsum(a @ b).backward()
    # d sum(AB) / dA[i,k] = sum_j B[k,j]
    np.testing.assert_allclose(a.grad, np.tile(b.data.sum(axis=1), (3, 1)), rtol=1e-12)
    np.testing.assert_allclose(b.grad, np.tile(a.data.sum(axis=0)[:, None], (1, 5)), rtol=1e-12)


def _weighted(out, rng):
    w = Tensor(np.random.default_rng(99).normal(size=out.shape))
    return T.tsum(out * w)


OPS = {
    "add_bias": lambda x, y: x + y[0],
    "sub": lambda x, y: x - y,
    "mul": lambda x, y: x * y,
    "matmul": lambda x, y: x @ T.transpose(y),
    "batched_matmul": lambda x, y: T.matmul(T.reshape(x, (3, 1, 4)), T.reshape(y, (3, 4, 1))),
    "exp": lambda x, y: T.exp(x * 0.3),
    "log": lambda x, y: T.log(T.exp(x) + 1.0),
    "tanh": lambda x, y: T.tanh(x),
    "sigmoid": lambda x, y: T.sigmoid(x),
    "gelu": lambda x, y: T.gelu(x),
    "power": lambda x, y: T.power(T.exp(x), 1.5),
    "mean_axis": lambda x, y: T.mean(x * y, axis=1),
    "concat": lambda x, y: T.concat([x, y], axis=0),
    "getitem": lambda x, y: x[1:, ::2] * y[1:, ::2],
    "fancy_getitem": lambda x, y: x[np.array([0, 0, 2])],
    "softmax": lambda x, y: T.softmax(x, axis=-1),
    "masked_softmax": lambda x, y: T.softmax(x, axis=-1, mask=np.array([True, False, True, True])),
    "layer_norm": lambda x, y: T.layer_norm(x, y[0] + 1.0, y[1]),
    "embedding": lambda x, y: T.embedding(x, np.array([[0, 2], [2, 1]])),
    "bce": lambda x, y: T.bce_with_logits(x, (y.data > 0).astype(float), np.ones(x.shape)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name, rng):
    x, y = param(rng, 3, 4), param(rng, 3, 4)
    op = OPS[name]
    report = finite_difference_check(lambda: _weighted(op(x, y), rng), [x, y])
    assert report.passed, (name, report)


@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_sum_to_one(x):
    out = T.softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(out >= 0)


def test_softmax_matches_high_precision_reference():
    x = np.array([1000.0, 999.0, -5.0, 0.25])
    out = T.softmax(Tensor(x)).data
    ref = [math.exp(v - 1000.0) for v in x]
    ref = [r / math.fsum(ref) for r in ref]
    np.testing.assert_allclose(out, ref, rtol=1e-14)


def test_softmax_mask_gives_exact_zeros_and_empty_rows():
    x = Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    mask = np.array([[True, False, True], [False, False, False]])
    out = T.softmax(x, mask=mask).data
    assert out[0, 1] == 0.0
    np.testing.assert_allclose(out[0].sum(), 1.0)
    np.testing.assert_array_equal(out[1], 0.0)


def test_add_broadcast_reduces_gradient(rng):
    x, b = param(rng, 2, 3, 4), param(rng, 4)
    T.tsum(x + b).backward()
    np.testing.assert_array_equal(b.grad, np.full(4, 6.0))


def test_shared_parent_gradients_accumulate():
    x = Tensor(np.array([2.0]), requires_grad=True)
    T.tsum(x * x + x).backward()
    np.testing.assert_allclose(x.grad, [5.0])


def test_backward_needs_scalar(rng):
    with pytest.raises(GradientError):
        (param(rng, 2) * 2.0).backward()


def test_no_grad_builds_no_graph(rng):
    x = param(rng, 3)
    with no_grad():
        y = T.tsum(x * 2.0)
    assert not y.requires_grad


def test_layer_norm_normalizes(rng):
    x = Tensor(rng.normal(3.0, 5.0, size=(4, 16)))
    out = T.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-6)


def test_bce_perfect_logits_is_small():
    # targets at +-10 logits: log(1 + e^-10) per entry
    targets = np.array([1.0, 0.0, 0.0, 1.0])
    logits = Tensor(np.where(targets > 0, 10.0, -10.0))
    loss = T.bce_with_logits(logits, targets, np.ones(4)).item()
    assert loss == pytest.approx(4 * math.log1p(math.exp(-10.0)), rel=1e-12)
    assert loss / 4 < 0.01


def test_bce_zero_weight_ignores_infinite_logits():
    logits = Tensor(np.array([np.inf, 0.0]))
    assert T.bce_with_logits(logits, np.array([0.0, 1.0]), np.array([0.0, 1.0])).item() == pytest.approx(math.log(2))


def test_dropout_is_identity_in_eval_and_seeded_in_training(rng):
    x = Tensor(np.ones((50, 50)))
    assert T.dropout(x, 0.5, None, training=False) is x
    a = T.dropout(x, 0.5, np.random.default_rng(0), True).data
    b = T.dropout(x, 0.5, np.random.default_rng(0), True).data
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}


def test_embedding_rejects_out_of_range(rng):
    with pytest.raises(IndexError):
        T.embedding(param(rng, 3, 2), np.array([3]))
