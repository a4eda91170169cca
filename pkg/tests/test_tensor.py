import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import TOL, check_op
from fusionsf import tensor as T
from fusionsf.optim import AdamW, OptimizerState, adamw_step
from fusionsf.tensor import GraphError, NumericError, ShapeError, Tensor


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# ---------------------------------------------------------------- forward examples


def test_matmul_identity():
    m = np.array([[1.5, -2.0], [3.0, 4.25]])
    assert np.array_equal(T.matmul(t(np.eye(2)), t(m)).data, m)


def test_concat_shape():
    assert T.concat([t(np.ones((1, 2))), t(np.ones((1, 3)))], axis=1).shape == (1, 5)


def test_mean_axis0():
    assert np.array_equal(T.mean(t([[1, 3], [3, 5]]), axis=0).data, [2, 4])


@pytest.mark.parametrize("x,expected", [([0, 0], [0.5, 0.5]), ([1000, 1000], [0.5, 0.5]), ([0, math.log(3)], [0.25, 0.75])])
def test_softmax_examples(x, expected):
    assert np.allclose(T.softmax(t(x)).data, expected, atol=1e-15)


def test_layer_norm_constant_collapses_to_beta():
    out = T.layer_norm(t([2.0, 2.0, 2.0]), t(np.ones(3)), t(np.zeros(3)))
    assert np.array_equal(out.data, [0.0, 0.0, 0.0])


def test_layer_norm_standardized_input():
    out = T.layer_norm(t([1.0, -1.0]), t(np.ones(2)), t(np.zeros(2)), eps=1e-14)
    assert np.allclose(out.data, [1.0, -1.0], atol=1e-12)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=16))
def test_layer_norm_zero_mean(values):
    out = T.layer_norm(t(values))
    assert abs(out.data.mean()) < 1e-10


def test_layer_norm_errors():
    with pytest.raises(ShapeError):
        T.layer_norm(t(np.zeros((2, 0))))
    with pytest.raises(ValueError):
        T.layer_norm(t([1.0, 2.0]), eps=0.0)


def test_gelu_zero_and_tanh_form():
    assert T.gelu(t([0.0])).data[0] == 0.0
    x = 1.3
    ref = 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    assert abs(T.gelu(t([x])).data[0] - ref) < 1e-15


def test_dropout_identities():
    x = t(np.arange(6.0).reshape(2, 3))
    rng = np.random.default_rng(0)
    assert np.array_equal(T.dropout(x, 0.0, True, rng).data, x.data)
    assert np.array_equal(T.dropout(x, 0.5, False).data, x.data)


def test_dropout_scaling_and_rate():
    x = t(np.ones(200_000))
    out = T.dropout(x, 0.25, True, np.random.default_rng(1)).data
    kept = out != 0
    assert np.allclose(out[kept], 1 / 0.75)
    assert abs(1 - kept.mean() - 0.25) < 0.005


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
def test_dropout_rejects_bad_p(p):
    with pytest.raises(ValueError):
        T.dropout(t([1.0]), p, True, np.random.default_rng(0))


def test_dropout_requires_rng_in_training():
    with pytest.raises(ValueError):
        T.dropout(t([1.0]), 0.5, True, None)


@settings(max_examples=50)
@given(st.integers(2, 8), st.integers(2, 8), st.integers(2, 8), st.integers(0, 2**31))
def test_matmul_matches_triple_loop(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, k)), rng.standard_normal((k, m))
    ref = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for q in range(k):
                s += a[i, q] * b[q, j]
            ref[i, j] = s
    assert np.allclose(T.matmul(t(a), t(b)).data, ref, rtol=0, atol=1e-12)


@settings(max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10))
def test_softmax_is_probability(values):
    s = T.softmax(t(values)).data
    assert (s >= 0).all() and abs(s.sum() - 1) < 1e-12


def test_softmax_empty_axis():
    with pytest.raises(ShapeError):
        T.softmax(t(np.zeros((2, 0))))


# ---------------------------------------------------------------- errors


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(t(np.ones((2, 3))), t(np.ones((4, 5))))
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        T.add(t(np.ones(2)), t(np.ones(3)))
    with pytest.raises(ShapeError):
        T.concat([t(np.ones((2, 2))), t(np.ones((3, 3)))], axis=0)
    with pytest.raises(ShapeError):
        T.reshape(t(np.ones(6)), (4, 2))
    with pytest.raises(ShapeError):
        T.permute(t(np.ones((2, 3))), (0, 0))


def test_non_finite_is_an_error():
    with pytest.raises(NumericError):
        Tensor([1.0, np.nan])
    with pytest.raises(NumericError):
        T.exp(t([1000.0]))
    with pytest.raises(NumericError):
        T.div(t([1.0]), t([0.0]))


# ---------------------------------------------------------------- backward


def test_square_gradient():
    x = t([3.0], grad=True)
    T.backward(T.sum(x * x))
    assert x.grad[0] == 6.0


def test_linear_gradient_is_column_sums():
    a = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    x = t([0.3, -0.7], grad=True)
    T.backward(T.sum(T.matmul(t(a), x.reshape(2, 1))))
    assert np.array_equal(x.grad, a.sum(axis=0))


def test_reused_node_accumulates():
    x = t([2.0], grad=True)
    y = x * 3.0
    T.backward(T.sum(y * y + y))  # d/dx (9x^2 + 3x) = 18x + 3
    assert x.grad[0] == 39.0


def test_backward_twice_is_an_error():
    x = t([1.0, 2.0], grad=True)
    loss = T.sum(x * x)
    T.backward(loss)
    with pytest.raises(GraphError):
        T.backward(loss)


def test_stale_gradient_must_be_reset():
    x = t([1.0, 2.0], grad=True)
    T.backward(T.sum(x * x))
    with pytest.raises(GraphError, match="zero_grad"):
        T.backward(T.sum(x * x))
    T.zero_grad([x])
    T.backward(T.sum(x * x))
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_non_scalar_and_detached_loss():
    x = t([1.0, 2.0], grad=True)
    with pytest.raises(GraphError):
        T.backward(x * 2.0)
    with pytest.raises(GraphError):
        T.backward(T.sum(t([1.0, 2.0]) * 2.0))
    with pytest.raises(GraphError):
        T.backward(T.sum(T.stop_gradient(x) * 2.0))


def test_no_grad_records_nothing():
    x = t([1.0], grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_straight_through_forward_and_backward():
    z_e = t([0.1, 0.2], grad=True)
    out = T.straight_through(z_e, np.array([1.0, -1.0]))
    assert np.array_equal(out.data, [1.0, -1.0])
    T.backward(T.sum(out * t([3.0, 4.0])))
    assert np.array_equal(z_e.grad, [3.0, 4.0])


def test_forward_bit_identical():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))

    def run():
        x = T.gelu(T.matmul(t(a), t(b)))
        return T.dropout(T.layer_norm(x), 0.3, True, np.random.default_rng(9)).data.tobytes()

    assert run() == run()


# ---------------------------------------------------------------- finite differences


def _ln(x, g, b):
    return T.layer_norm(x, g, b)


def _dropout(x):
    return T.dropout(x, 0.3, True, np.random.default_rng(5))


IDX = np.array([[2, 0, 1], [1, 1, 0]])

OPS = {
    "add_broadcast": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub_broadcast": (lambda a, b: a - b, [(2, 3), (2, 1)]),
    "mul": (lambda a, b: a * b, [(3, 4), (3, 4)]),
    "div": (lambda a, b: a / b, [(3, 4), (3, 4)]),
    "exp": (T.exp, [(3, 4)]),
    "matmul_2d": (T.matmul, [(3, 4), (4, 2)]),
    "matmul_batched": (T.matmul, [(2, 3, 4), (2, 4, 2)]),
    "matmul_stack_times_matrix": (T.matmul, [(2, 3, 4), (4, 2)]),
    "matmul_broadcast": (T.matmul, [(2, 1, 3, 4), (3, 4, 2)]),
    "reshape": (lambda a: T.reshape(a, (6, 2)), [(3, 4)]),
    "permute": (lambda a: T.permute(a, (2, 0, 1)), [(2, 3, 4)]),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "getitem_basic": (lambda a: a[1:, ::2], [(3, 4)]),
    "getitem_fancy": (lambda a: a[np.array([0, 2, 0])], [(3, 4)]),
    "take_along": (lambda a: T.take(a, IDX, axis=1), [(2, 3)]),
    "take_along_unique": (lambda a: T.take(a, np.array([[2, 0], [1, 0]]), axis=1, unique=True), [(2, 3)]),
    "take_flat": (lambda a: T.take(a, np.array([0, 0, 2]), axis=0), [(3, 2)]),
    "sum_axis": (lambda a: T.sum(a, axis=1), [(3, 4)]),
    "sum_keepdims": (lambda a: T.sum(a, axis=(0, 2), keepdims=True), [(2, 3, 2)]),
    "mean_axis": (lambda a: T.mean(a, axis=0), [(3, 4)]),
    "softmax": (lambda a: T.softmax(a, axis=-1), [(3, 5)]),
    "softmax_axis0": (lambda a: T.softmax(a, axis=0), [(3, 5)]),
    "layer_norm": (_ln, [(3, 6), (6,), (6,)]),
    "gelu": (T.gelu, [(4, 5)]),
    "dropout": (_dropout, [(4, 5)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradient_matches_finite_differences(name):
    op, shapes = OPS[name]
    assert check_op(op, *shapes, positive=name == "div") < TOL


# ---------------------------------------------------------------- AdamW


def _param(values):
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True, name="p")


def test_adamw_zero_gradient_no_decay_is_noop():
    p = _param([1.0, -2.0])
    adamw_step([p], [np.zeros(2)], OptimizerState(lr=0.1, weight_decay=0.0))
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adamw_first_step_is_signed_lr():
    p = _param([0.0, 0.0, 0.0])
    g = np.array([0.3, -5.0, 2e-3])
    st_ = OptimizerState(lr=0.01, weight_decay=0.0)
    adamw_step([p], [g], st_)
    assert np.allclose(p.data, -0.01 * np.sign(g), rtol=1e-5)
    assert st_.step == 1


def test_adamw_decay_only():
    p = _param([2.0, -4.0])
    adamw_step([p], [np.zeros(2)], OptimizerState(lr=0.1, weight_decay=0.05))
    assert np.allclose(p.data, np.array([2.0, -4.0]) * (1 - 0.1 * 0.05), rtol=0, atol=1e-15)


def test_adamw_matches_reference_loop():
    rng = np.random.default_rng(0)
    p0 = rng.standard_normal(5)
    grads = rng.standard_normal((7, 5))
    lr, wd, b1, b2, eps = 1e-2, 0.05, 0.9, 0.999, 1e-8
    ref, m, v = p0.copy(), np.zeros(5), np.zeros(5)
    for k, g in enumerate(grads, 1):
        ref = ref - lr * wd * ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        ref = ref - lr * (m / (1 - b1**k)) / (np.sqrt(v / (1 - b2**k)) + eps)
    p = _param(p0)
    opt = AdamW([p], lr=lr, weight_decay=wd)
    for g in grads:
        p.grad = g
        opt.step()
    assert np.allclose(p.data, ref, rtol=0, atol=1e-14)
    assert opt.state.step == 7


def test_adamw_errors():
    p = _param([1.0, 2.0])
    with pytest.raises(ShapeError):
        adamw_step([p], [np.zeros(3)], OptimizerState())
    with pytest.raises(ValueError):
        adamw_step([p], [np.zeros(2)], OptimizerState(lr=0.0))
