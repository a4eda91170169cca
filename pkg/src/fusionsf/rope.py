"""Rotary positional encoding and RoPE-equipped attention.

One-dimensional positions (hours) use the classic frequency schedule
``theta_i = 10000 ** (-2 (i - 1) / d)``. Multi-axis positions (patch centres,
plant coordinates in [-1, 1]) split the channels evenly between axes and use
frequencies linearly spaced in ``[1, max_freq / 2]`` times pi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Linear, Module
from .tensor import ShapeError, Tensor


@dataclass
class RopeTables:
    """Sine/cosine tables of shape ``[..., N, dim]`` with pairwise-duplicated entries."""

    sin: np.ndarray
    cos: np.ndarray

    @property
    def n(self) -> int:
        return self.sin.shape[-2]

    @property
    def dim(self) -> int:
        return self.sin.shape[-1]

    def take(self, index: np.ndarray) -> RopeTables:
        """Subset positions: ``index`` has shape ``[M, N_kept]`` against tables ``[N, d]``
        or ``[M, N, d]``; returns ``[M, N_kept, d]``."""
        if self.sin.ndim == 2:
            return RopeTables(self.sin[index], self.cos[index])
        idx = index[..., None]
        return RopeTables(
            np.take_along_axis(self.sin, idx, axis=-2),
            np.take_along_axis(self.cos, idx, axis=-2),
        )


def temporal_frequencies(dim: int) -> np.ndarray:
    i = np.arange(dim // 2)
    return 10000.0 ** (-2.0 * i / dim)


def spatial_frequencies(count: int, max_freq: float) -> np.ndarray:
    return np.linspace(1.0, max_freq / 2.0, count) * np.pi


def build_rope_tables(positions, dim: int, max_freq: float = 128) -> RopeTables:
    """Tables for ``positions`` of shape ``[..., N]`` / ``[..., N, 1]`` (1-D) or ``[..., N, p]``."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim == 1:
        pos = pos[:, None]
    p_dims = pos.shape[-1]
    if dim % 2:
        raise ValueError(f"rope dim must be even, got {dim}")
    if p_dims == 1:
        angles = pos[..., 0:1] * temporal_frequencies(dim)
    else:
        if dim % (2 * p_dims):
            raise ValueError(f"rope dim {dim} not divisible by {2 * p_dims} for {p_dims}-axis positions")
        freqs = spatial_frequencies(dim // (2 * p_dims), max_freq)
        angles = np.concatenate([pos[..., a : a + 1] * freqs for a in range(p_dims)], axis=-1)
    angles = np.repeat(angles, 2, axis=-1)
    return RopeTables(np.sin(angles), np.cos(angles))


def rotate_every_two(x: Tensor) -> Tensor:
    """(x1, x2, x3, x4, ...) -> (-x2, x1, -x4, x3, ...) on the last axis."""
    if x.shape[-1] % 2:
        raise ShapeError(f"rotate_every_two needs an even last dim, got shape {x.shape}")
    xd = x.data
    out = np.empty_like(xd)
    out[..., 0::2] = -xd[..., 1::2]
    out[..., 1::2] = xd[..., 0::2]

    def rule(g):
        gin = np.empty_like(g)
        gin[..., 0::2] = g[..., 1::2]
        gin[..., 1::2] = -g[..., 0::2]
        return (gin,)

    return T.record(out, (x,), rule, "rotate_every_two")


def apply_rope(x: Tensor, tables: RopeTables) -> Tensor:
    """``x * cos + rotate_every_two(x) * sin``; tables broadcast against ``x``."""
    if x.shape[-1] != tables.dim or x.shape[-2] != tables.n:
        raise ShapeError(f"apply_rope: x has shape {x.shape}, tables {tables.sin.shape}")
    return x * tables.cos + rotate_every_two(x) * tables.sin


class AttentionParams(Module):
    """Q, KV and output projections for multi-head attention."""

    def __init__(self, dim: int, heads: int, dim_head: int, rng: np.random.Generator, kv_dim: int | None = None):
        inner = heads * dim_head
        self.heads, self.dim_head, self.dim = heads, dim_head, dim
        self.kv_dim = kv_dim or dim
        self.to_q = Linear(dim, inner, rng, bias=False)
        self.to_kv = Linear(self.kv_dim, 2 * inner, rng, bias=False)
        self.to_out = Linear(inner, dim, rng)


def _heads(x: Tensor, heads: int, dim_head: int) -> Tensor:
    lead = x.shape[:-2]
    n = x.shape[-2]
    return x.reshape(*lead, n, heads, dim_head).permute(*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)


def _merge(x: Tensor) -> Tensor:
    # [..., h, N, dh] -> [..., N, h*dh]
    nd = x.ndim
    lead = x.shape[:-3]
    h, n, dh = x.shape[-3:]
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return x.permute(axes).reshape(*lead, n, h * dh)


def _head_tables(tables: RopeTables | None) -> RopeTables | None:
    if tables is None or tables.sin.ndim == 2:
        return tables
    return RopeTables(tables.sin[..., None, :, :], tables.cos[..., None, :, :])


def _rope_heads(x: Tensor, tables: RopeTables | None) -> Tensor:
    if tables is None:
        return x
    if tables.n != x.shape[-2] or tables.dim != x.shape[-1]:
        raise ShapeError(f"rope tables {tables.sin.shape} do not match tokens {x.shape}")
    ht = _head_tables(tables)
    return x * ht.cos + rotate_every_two(x) * ht.sin


def attention_weights(
    q_tokens: Tensor,
    kv_tokens: Tensor,
    params: AttentionParams,
    tables_q: RopeTables | None,
    tables_kv: RopeTables | None,
) -> tuple[Tensor, Tensor]:
    """Return softmax attention ``[..., h, Nq, Nk]`` and per-head values ``[..., h, Nk, dh]``."""
    h, dh = params.heads, params.dim_head
    if q_tokens.shape[:-2] != kv_tokens.shape[:-2]:
        raise ShapeError(f"attention: batch shapes {q_tokens.shape} and {kv_tokens.shape} differ")
    q = _heads(params.to_q(q_tokens), h, dh)
    kv = params.to_kv(kv_tokens)
    inner = h * dh
    k = _heads(kv[..., :inner], h, dh)
    v = _heads(kv[..., inner:], h, dh)
    q = _rope_heads(q, tables_q)
    k = _rope_heads(k, tables_kv)
    nd = k.ndim
    kt = k.permute(*range(nd - 2), nd - 1, nd - 2)
    dots = T.matmul(q, kt) * (dh**-0.5)
    return T.softmax(dots, axis=-1), v


def cross_attention(
    q_tokens: Tensor,
    kv_tokens: Tensor,
    params: AttentionParams,
    tables_q: RopeTables | None = None,
    tables_kv: RopeTables | None = None,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Queries from ``q_tokens [..., Nq, dq]`` attend over ``kv_tokens [..., Nk, dkv]``."""
    if q_tokens.shape[-1] != params.dim or kv_tokens.shape[-1] != params.kv_dim:
        raise ShapeError(
            f"cross_attention: token dims {q_tokens.shape[-1]}/{kv_tokens.shape[-1]} "
            f"vs projections {params.dim}/{params.kv_dim}"
        )
    attn, v = attention_weights(q_tokens, kv_tokens, params, tables_q, tables_kv)
    attn = T.dropout(attn, dropout, training, rng)
    return params.to_out(_merge(T.matmul(attn, v)))


def rope_self_attention(
    x: Tensor,
    params: AttentionParams,
    tables: RopeTables | None,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    if tables is not None and tables.n != x.shape[-2]:
        raise ShapeError(f"rope_self_attention: {x.shape[-2]} tokens but tables for {tables.n}")
    return cross_attention(x, x, params, tables, tables, dropout, training, rng)
