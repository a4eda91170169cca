import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import TOL, check_op
from fusionsf import tensor as T
from fusionsf.rope import (
    AttentionParams,
    RopeTables,
    apply_rope,
    build_rope_tables,
    cross_attention,
    rope_self_attention,
    rotate_every_two,
    temporal_frequencies,
)
from fusionsf.tensor import ShapeError, Tensor


def rot_naive(x, angles):
    """Per-pair planar rotation, written out."""
    out = np.empty_like(x)
    for i in range(0, len(x), 2):
        c, s = math.cos(angles[i // 2]), math.sin(angles[i // 2])
        out[i] = c * x[i] - s * x[i + 1]
        out[i + 1] = s * x[i] + c * x[i + 1]
    return out


# ---------------------------------------------------------------- tables


def test_zero_position():
    tab = build_rope_tables(np.zeros(3), 8)
    assert np.array_equal(tab.sin, np.zeros((3, 8))) and np.array_equal(tab.cos, np.ones((3, 8)))


def test_unit_frequency_quarter_turn():
    tab = build_rope_tables(np.array([math.pi / 2]), 2)
    assert np.allclose(tab.sin, [[1, 1]], atol=1e-12) and np.allclose(tab.cos, [[0, 0]], atol=1e-12)


def test_temporal_frequency_schedule():
    d = 8
    expected = [10000 ** (-2 * (i - 1) / d) for i in range(1, d // 2 + 1)]
    assert np.allclose(temporal_frequencies(d), expected, rtol=1e-15)


@given(st.integers(0, 2**31))
def test_pythagorean_identity_and_pairs(seed):
    rng = np.random.default_rng(seed)
    for pos in (rng.uniform(-50, 50, 5), rng.uniform(-1, 1, (5, 2))):
        tab = build_rope_tables(pos, 8)
        assert np.allclose(tab.sin**2 + tab.cos**2, 1.0, atol=1e-12)
        assert np.array_equal(tab.sin[:, 0::2], tab.sin[:, 1::2])
        assert np.array_equal(tab.cos[:, 0::2], tab.cos[:, 1::2])


def test_two_axis_split():
    pos = np.array([[0.3, 0.0]])
    tab = build_rope_tables(pos, 8, max_freq=8)
    assert np.all(tab.sin[0, 4:] == 0)  # second axis is at zero
    freqs = np.linspace(1, 4, 2) * np.pi
    assert np.allclose(tab.sin[0, :4], np.repeat(np.sin(0.3 * freqs), 2), rtol=0, atol=1e-15)


def test_table_errors():
    with pytest.raises(ValueError):
        build_rope_tables(np.zeros(3), 7)
    with pytest.raises(ValueError):
        build_rope_tables(np.zeros((3, 2)), 6)


# ---------------------------------------------------------------- rotation


def test_rotate_every_two_examples():
    x = Tensor([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(rotate_every_two(x).data, [-2, 1, -4, 3])
    assert np.array_equal(rotate_every_two(rotate_every_two(x)).data, -x.data)
    four = x
    for _ in range(4):
        four = rotate_every_two(four)
    assert np.array_equal(four.data, x.data)
    with pytest.raises(ShapeError):
        rotate_every_two(Tensor([1.0, 2.0, 3.0]))


def test_apply_rope_examples():
    x = Tensor(np.random.default_rng(0).standard_normal((3, 8)))
    assert np.array_equal(apply_rope(x, build_rope_tables(np.zeros(3), 8)).data, x.data)
    quarter = apply_rope(Tensor([[1.0, 0.0]]), build_rope_tables(np.array([math.pi / 2]), 2))
    assert np.allclose(quarter.data, [[0.0, 1.0]], atol=1e-15)
    with pytest.raises(ShapeError):
        apply_rope(x, build_rope_tables(np.zeros(4), 8))


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_apply_rope_matches_pairwise_rotation_and_norm(seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-100, 100, 4)
    x = rng.standard_normal((4, 8))
    out = apply_rope(Tensor(x), build_rope_tables(pos, 8)).data
    freqs = temporal_frequencies(8)
    for r in range(4):
        assert np.allclose(out[r], rot_naive(x[r], pos[r] * freqs), rtol=0, atol=1e-12)
    assert np.allclose(np.linalg.norm(out, axis=1), np.linalg.norm(x, axis=1), rtol=0, atol=1e-10)


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_relative_position_property(seed):
    rng = np.random.default_rng(seed)
    q, k = rng.standard_normal(8), rng.standard_normal(8)
    m, n, s = rng.uniform(-100, 100, 3)

    def score(a, b):
        tq = build_rope_tables(np.array([a]), 8)
        tk = build_rope_tables(np.array([b]), 8)
        return float(apply_rope(Tensor(q[None]), tq).data[0] @ apply_rope(Tensor(k[None]), tk).data[0])

    assert abs(score(m, n) - score(m + s, n + s)) < 1e-8


def test_rotation_gradients():
    tab = build_rope_tables(np.random.default_rng(1).uniform(-3, 3, 4), 6)
    assert check_op(rotate_every_two, (3, 6)) < TOL
    assert check_op(lambda x: apply_rope(x, tab), (4, 6)) < TOL


# ---------------------------------------------------------------- attention


def naive_attention(xq, xkv, p: AttentionParams, tq=None, tk=None):
    """Per-element loops over heads, queries and keys."""
    wq, wkv = p.to_q.weight.data, p.to_kv.weight.data
    wo, bo = p.to_out.weight.data, p.to_out.bias.data
    h, dh = p.heads, p.dim_head
    inner = h * dh
    nq, nk = xq.shape[0], xkv.shape[0]
    q, kv = xq @ wq, xkv @ wkv
    k, v = kv[:, :inner], kv[:, inner:]
    mixed = np.zeros((nq, inner))
    for head in range(h):
        sl = slice(head * dh, (head + 1) * dh)
        for i in range(nq):
            qi = q[i, sl]
            if tq is not None:
                qi = qi * tq.cos[i] + np.concatenate([[-qi[j + 1], qi[j]] for j in range(0, dh, 2)]) * tq.sin[i]
            scores = np.zeros(nk)
            for j in range(nk):
                kj = k[j, sl]
                if tk is not None:
                    kj = kj * tk.cos[j] + np.concatenate([[-kj[u + 1], kj[u]] for u in range(0, dh, 2)]) * tk.sin[j]
                scores[j] = sum(qi[u] * kj[u] for u in range(dh)) / math.sqrt(dh)
            w = np.exp(scores - scores.max())
            w /= w.sum()
            for j in range(nk):
                mixed[i, sl] += w[j] * v[j, sl]
    return mixed @ wo + bo


@pytest.mark.parametrize("seed", range(5))
def test_cross_attention_matches_naive_reference(seed):
    rng = np.random.default_rng(seed)
    p = AttentionParams(6, 2, 4, rng, kv_dim=5)
    p.to_out.bias.data = rng.standard_normal(6)
    xq, xkv = rng.standard_normal((3, 6)), rng.standard_normal((4, 5))
    tq = build_rope_tables(rng.uniform(-1, 1, (3, 2)), 4)
    tk = build_rope_tables(rng.uniform(-1, 1, (4, 2)), 4)
    got = cross_attention(Tensor(xq), Tensor(xkv), p, tq, tk).data
    assert np.allclose(got, naive_attention(xq, xkv, p, tq, tk), rtol=0, atol=1e-10)


def test_single_kv_token_and_duplicates():
    rng = np.random.default_rng(0)
    p = AttentionParams(4, 2, 2, rng)
    p.to_out.bias.data = rng.standard_normal(4)
    xq, y = rng.standard_normal((3, 4)), rng.standard_normal((1, 4))
    single = cross_attention(Tensor(xq), Tensor(y), p).data
    v = y @ p.to_kv.weight.data[:, 4:]
    assert np.allclose(single, np.repeat(v @ p.to_out.weight.data + p.to_out.bias.data, 3, axis=0), atol=1e-14)
    double = cross_attention(Tensor(xq), Tensor(np.repeat(y, 2, axis=0)), p).data
    assert np.allclose(single, double, atol=1e-14)


def test_self_attention_single_token_and_symmetry():
    rng = np.random.default_rng(1)
    p = AttentionParams(4, 1, 4, rng)
    x = rng.standard_normal((1, 1, 4))
    out = rope_self_attention(Tensor(x), p, build_rope_tables(np.array([5.0]), 4)).data
    v = x[0] @ p.to_kv.weight.data[:, 4:]
    assert np.allclose(out[0], v @ p.to_out.weight.data + p.to_out.bias.data, atol=1e-14)
    row = rng.standard_normal(4)
    same = np.stack([row, row, row])[None]
    flat = build_rope_tables(np.zeros(3), 4)
    out = rope_self_attention(Tensor(same), p, flat).data[0]
    assert np.allclose(out, out[0], atol=1e-14)
    assert out.shape == (3, 4)


def test_identity_tables_equal_vanilla_attention():
    rng = np.random.default_rng(2)
    p = AttentionParams(6, 2, 4, rng)
    x = rng.standard_normal((2, 5, 6))
    ident = RopeTables(np.zeros((5, 4)), np.ones((5, 4)))
    assert np.array_equal(rope_self_attention(Tensor(x), p, ident).data, rope_self_attention(Tensor(x), p, None).data)


def test_attention_rows_sum_to_one():
    from fusionsf.rope import attention_weights

    rng = np.random.default_rng(3)
    p = AttentionParams(6, 3, 2, rng)
    x = Tensor(rng.standard_normal((2, 5, 6)))
    attn, _ = attention_weights(x, x, p, build_rope_tables(np.arange(5.0), 2), build_rope_tables(np.arange(5.0), 2))
    assert np.allclose(attn.data.sum(-1), 1.0, atol=1e-12)


def test_attention_shape_errors():
    rng = np.random.default_rng(4)
    p = AttentionParams(4, 1, 4, rng)
    with pytest.raises(ShapeError):
        rope_self_attention(Tensor(np.zeros((1, 3, 4))), p, build_rope_tables(np.zeros(2), 4))
    with pytest.raises(ShapeError):
        cross_attention(Tensor(np.zeros((3, 5))), Tensor(np.zeros((2, 4))), p)


def test_attention_gradient():
    rng = np.random.default_rng(5)
    p = AttentionParams(4, 2, 2, rng)
    tab = build_rope_tables(np.arange(3.0), 2)
    assert check_op(lambda x: rope_self_attention(x, p, tab), (2, 3, 4)) < TOL
    # parameter gradient through the same graph
    x = Tensor(rng.standard_normal((2, 3, 4)))
    w = rng.standard_normal((2, 3, 4))

    def f(wq):
        p.to_q.weight.data = wq
        with T.no_grad():
            return float(np.sum(w * rope_self_attention(x, p, tab).data))

    from fdcheck import numeric_grad, rel_error

    wq = p.to_q.weight.data.copy()
    T.zero_grad(p.parameters())
    T.backward(T.sum(rope_self_attention(x, p, tab) * Tensor(w)))
    analytic = p.to_q.weight.grad
    num = numeric_grad(f, [wq.copy()])[0]
    assert rel_error(analytic, num) < TOL
