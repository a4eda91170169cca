import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionsf import tensor as T
from fusionsf.tensor import ShapeError, Tensor
from fusionsf.vq import (
    Codebook,
    ResidualVQ,
    ema_update,
    nearest_codes,
    quantize,
    residual_quantize,
    rvq_ema_update,
    straight_through,
)


def brute_nearest(codes, z):
    """Scan every code; keep the first strictly smaller squared distance."""
    out = []
    for row in z:
        best, best_d = 0, None
        for j, c in enumerate(codes):
            d = float(np.sum((row - c) ** 2))
            if best_d is None or d < best_d:
                best, best_d = j, d
        out.append(best)
    return np.array(out)


def test_quantize_example():
    cb = Codebook.from_codes([[0.0, 0.0], [2.0, 2.0]])
    z_q, idx, commit = quantize(cb, Tensor([[0.4, 0.6]]))
    assert idx.tolist() == [0] and np.array_equal(z_q, [[0.0, 0.0]])
    assert abs(commit.item() - 0.52) < 1e-15


def test_exact_code_has_zero_commitment():
    cb = Codebook.from_codes([[0.0, 1.0], [2.0, 2.0]])
    _, idx, commit = quantize(cb, Tensor([[2.0, 2.0]]))
    assert idx.tolist() == [1] and commit.item() == 0.0


def test_ties_go_to_lowest_index():
    cb = Codebook.from_codes([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
    assert nearest_codes(cb.codes, np.array([[0.0, 0.0], [1.0, 0.0]])).tolist() == [0, 0]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.integers(1, 8), st.integers(1, 32), st.integers(0, 2**31))
def test_nearest_matches_brute_force(k, d, n, seed):
    rng = np.random.default_rng(seed)
    codes = rng.standard_normal((k, d))
    z = rng.standard_normal((n, d))
    assert np.array_equal(nearest_codes(codes, z), brute_nearest(codes, z))


def test_commitment_is_mean_squared_distance():
    rng = np.random.default_rng(0)
    cb = Codebook.from_codes(rng.standard_normal((5, 3)))
    z = rng.standard_normal((7, 3))
    z_q, _, commit = quantize(cb, Tensor(z))
    assert np.isclose(commit.item(), np.mean(np.sum((z - z_q) ** 2, axis=1)), rtol=1e-15)


def test_quantize_errors_and_no_mutation():
    cb = Codebook.from_codes(np.eye(3))
    before = cb.codes.copy()
    with pytest.raises(ShapeError):
        quantize(cb, Tensor(np.zeros((2, 4))))
    with pytest.raises(ValueError):
        nearest_codes(np.zeros((0, 3)), np.zeros((1, 3)))
    quantize(cb, Tensor(np.ones((4, 3))))
    assert np.array_equal(cb.codes, before)


# ---------------------------------------------------------------- straight-through


def test_straight_through_value_and_gradient():
    z_e = Tensor(np.array([[0.3, -0.2]]), requires_grad=True)
    out = straight_through(z_e, np.array([[1.0, 1.0]]))
    assert np.array_equal(out.data, [[1.0, 1.0]])
    T.backward(T.sum(out))
    assert np.array_equal(z_e.grad, [[1.0, 1.0]])
    with pytest.raises(ShapeError):
        straight_through(z_e, np.zeros(3))


def test_straight_through_matches_identity_twin():
    rng = np.random.default_rng(1)
    w1, w2 = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    x = rng.standard_normal((5, 3))
    cb = Codebook.from_codes(rng.standard_normal((6, 4)))
    c = rng.standard_normal((5, 2))

    def grad_w1(quantized):
        p = Tensor(w1.copy(), requires_grad=True)
        h = T.matmul(Tensor(x), p)
        z_q, _, _ = quantize(cb, h)
        mid = straight_through(h, z_q) if quantized else h
        # a linear head has the same Jacobian at z_q and at h, so both twins must agree
        T.backward(T.sum(T.matmul(mid, Tensor(w2)) * Tensor(c)))
        return p.grad

    assert np.allclose(grad_w1(True), grad_w1(False), rtol=0, atol=1e-14)


# ---------------------------------------------------------------- EMA


def test_ema_constant_cluster_converges():
    rng = np.random.default_rng(2)
    cb = Codebook.from_codes(rng.uniform(-1, 1, (8, 3)), decay=0.99)
    p = np.array([0.4, -0.3, 0.1])
    for _ in range(500):
        z = np.repeat(p[None], 16, axis=0)
        ema_update(cb, z, nearest_codes(cb.codes, z))
    target = nearest_codes(cb.codes, p[None])[0]
    assert np.linalg.norm(cb.codes[target] - p) < 1e-3


def test_ema_zero_decay_jumps_to_batch_mean():
    cb = Codebook.from_codes([[0.0, 0.0], [5.0, 5.0]], decay=0.0, eps=1e-12)
    z = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 5.5]])
    ema_update(cb, z, np.array([0, 0, 1]))
    assert np.allclose(cb.codes, [[2.0, 3.0], [5.0, 5.5]], atol=1e-9)


def test_ema_unassigned_code_keeps_value():
    cb = Codebook.from_codes([[1.0, 1.0], [-3.0, 2.0]], decay=0.9)
    ema_update(cb, np.array([[1.2, 0.8]]), np.array([0]))
    assert np.allclose(cb.codes[1], [-3.0, 2.0], rtol=1e-4)


def test_ema_smoothing_formula():
    rng = np.random.default_rng(3)
    cb = Codebook.from_codes(rng.standard_normal((4, 2)), decay=0.9, eps=1e-2)
    n0, m0 = cb.ema_counts.copy(), cb.ema_sums.copy()
    z = rng.standard_normal((6, 2))
    idx = np.array([0, 0, 1, 3, 3, 3])
    ema_update(cb, z, idx)
    counts = np.array([2.0, 1.0, 0.0, 3.0])
    sums = np.array([z[idx == i].sum(axis=0) if (idx == i).any() else np.zeros(2) for i in range(4)])
    n = 0.9 * n0 + 0.1 * counts
    m = 0.9 * m0 + 0.1 * sums
    smooth = (n + 1e-2) / (n.sum() + 4 * 1e-2) * n.sum()
    assert np.allclose(cb.codes, m / smooth[:, None], rtol=1e-14)
    assert (cb.ema_counts >= 0).all()


def test_ema_index_out_of_range():
    cb = Codebook.from_codes(np.eye(2))
    with pytest.raises(IndexError):
        ema_update(cb, np.zeros((1, 2)), np.array([2]))


def test_dead_code_reseeded():
    cb = Codebook.from_codes([[0.0, 0.0], [9.0, 9.0]])
    z = np.array([[0.1, 0.0], [0.2, 0.1]])
    rng = np.random.default_rng(0)
    for _ in range(3):
        ema_update(cb, z, np.array([0, 0]), rng=rng, dead_after=3)
    assert cb.idle[1] == 0
    assert any(np.allclose(cb.ema_sums[1], r) for r in z)


# ---------------------------------------------------------------- residual


def test_residual_example():
    rvq = ResidualVQ([Codebook.from_codes([[0.0, 0.0], [2.0, 2.0]]), Codebook.from_codes([[0.0, 0.0], [0.5, 0.5]], frozen_zero=True)])
    res = residual_quantize(rvq, Tensor([[2.4, 2.6]]))
    assert [i.tolist() for i in res.indices] == [[1], [1]]
    assert np.allclose(res.z_q, [[2.5, 2.5]], atol=1e-15)


def test_single_stage_is_plain_quantize():
    rng = np.random.default_rng(4)
    cb = Codebook.from_codes(rng.standard_normal((5, 3)))
    z = Tensor(rng.standard_normal((6, 3)))
    z_q, idx, commit = quantize(cb, z)
    res = residual_quantize(ResidualVQ([cb]), z)
    assert np.array_equal(res.z_q, z_q) and np.array_equal(res.indices[0], idx)
    assert res.commit.item() == commit.item()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 4))
def test_residual_error_non_increasing(seed, n_stages):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((32, 4))
    rvq = ResidualVQ.init_from(z, n_stages, 8, rng)
    for _ in range(5):  # a few EMA steps so codebooks are "trained"
        rvq_ema_update(rvq, residual_quantize(rvq, Tensor(z)))
    test = rng.standard_normal((20, 4))
    errs = [np.linalg.norm(test - residual_quantize(ResidualVQ(rvq.stages[:q]), Tensor(test)).z_q, axis=1) for q in range(1, n_stages + 1)]
    for a, b in zip(errs, errs[1:]):
        assert (b <= a + 1e-12).all()


def test_frozen_offset_twin_is_smooth():
    rng = np.random.default_rng(5)
    z = rng.standard_normal((4, 3))
    rvq = ResidualVQ.init_from(z, 2, 4, rng)
    first = residual_quantize(rvq, Tensor(z))
    offset = first.z_q - z
    twin = residual_quantize(rvq, Tensor(z), frozen=first.indices, offset=offset)
    assert np.allclose(twin.out.data, first.out.data, atol=1e-15)
    assert twin.commit.item() == pytest.approx(first.commit.item(), rel=1e-14)
