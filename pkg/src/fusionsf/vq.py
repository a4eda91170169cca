"""Vector quantization: nearest-code lookup, straight-through gradients,
commitment loss, EMA codebook learning and residual (multi-stage) quantization.

Codebooks are never touched by gradients. They move only through
:func:`ema_update`, which reads encoder outputs as plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class Codebook:
    codes: np.ndarray  # [K, D]
    ema_counts: np.ndarray  # [K]
    ema_sums: np.ndarray  # [K, D]
    decay: float = 0.99
    eps: float = 1e-5
    frozen_zero: bool = False  # code 0 pinned at the origin
    idle: np.ndarray = field(default=None)  # consecutive updates without assignment

    def __post_init__(self):
        if self.idle is None:
            self.idle = np.zeros(len(self.codes), dtype=np.int64)

    @classmethod
    def from_codes(cls, codes, decay=0.99, eps=1e-5, frozen_zero=False) -> Codebook:
        codes = np.array(codes, dtype=np.float64)
        if frozen_zero:
            codes[0] = 0.0
        return cls(codes, np.ones(len(codes)), codes.copy(), decay, eps, frozen_zero)

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]


def nearest_codes(codes: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Index of the closest code (L2) per row of ``z``; ties go to the lowest index."""
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise ValueError("codebook is empty")
    if z.shape[-1] != codes.shape[1]:
        raise ShapeError(f"vectors of dim {z.shape[-1]} against codes of dim {codes.shape[1]}")
    d = (z * z).sum(-1, keepdims=True) - 2.0 * z @ codes.T + (codes * codes).sum(-1)
    return d.argmin(axis=-1)


def commitment(z_e: Tensor, selected: np.ndarray) -> Tensor:
    """Mean over vectors of the squared L2 distance to gradient-stopped codes."""
    diff = z_e - Tensor(selected)
    return T.mean(T.sum(diff * diff, axis=-1))


def quantize(cb: Codebook, z_e: Tensor) -> tuple[np.ndarray, np.ndarray, Tensor]:
    """Return ``(z_q, indices, commit_loss)`` for ``z_e`` of shape ``[..., D]``.

    ``z_q`` is a plain array; route it through :func:`straight_through` to
    keep the encoder differentiable.
    """
    if z_e.size == 0:
        raise ShapeError("quantize: no vectors")
    idx = nearest_codes(cb.codes, z_e.data)
    z_q = cb.codes[idx]
    return z_q, idx, commitment(z_e, z_q)


def straight_through(z_e: Tensor, z_q) -> Tensor:
    return T.straight_through(z_e, z_q)


def ema_update(cb: Codebook, z_e, indices, rng: np.random.Generator | None = None, dead_after: int | None = None) -> None:
    """Exponential-moving-average codebook step with Laplace-smoothed counts.

    ``z_e`` may be a Tensor or array; only its values are read. Codes idle for
    ``dead_after`` consecutive updates are reseeded from ``z_e`` when an rng is given.
    """
    z = z_e.data if isinstance(z_e, Tensor) else np.asarray(z_e, dtype=np.float64)
    z = z.reshape(-1, cb.dim)
    idx = np.asarray(indices).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= cb.size):
        raise IndexError(f"code index out of range [0, {cb.size})")
    counts = np.bincount(idx, minlength=cb.size).astype(np.float64)
    sums = np.zeros_like(cb.ema_sums)
    np.add.at(sums, idx, z)
    g = cb.decay
    cb.ema_counts = g * cb.ema_counts + (1.0 - g) * counts
    cb.ema_sums = g * cb.ema_sums + (1.0 - g) * sums
    total = cb.ema_counts.sum()
    k = cb.size
    smoothed = (cb.ema_counts + cb.eps) / (total + k * cb.eps) * total
    cb.codes = cb.ema_sums / smoothed[:, None]
    if cb.frozen_zero:
        cb.codes[0] = 0.0
        cb.ema_sums[0] = 0.0
    cb.idle = np.where(counts > 0, 0, cb.idle + 1)
    if dead_after and rng is not None and len(z):
        dead = np.flatnonzero(cb.idle >= dead_after)
        if cb.frozen_zero:
            dead = dead[dead != 0]
        if dead.size:
            picks = z[rng.integers(0, len(z), size=dead.size)]
            cb.ema_counts[dead] = 1.0
            cb.ema_sums[dead] = picks
            cb.idle[dead] = 0
            total = cb.ema_counts.sum()
            smoothed = (cb.ema_counts + cb.eps) / (total + k * cb.eps) * total
            cb.codes = cb.ema_sums / smoothed[:, None]
            if cb.frozen_zero:
                cb.codes[0] = 0.0


@dataclass
class ResidualVQ:
    """Stack of codebooks; stage ``s`` quantizes what earlier stages left over.

    Stages after the first pin code 0 at the origin, so an extra stage can
    never move a vector further from its input.
    """

    stages: list[Codebook]
    commitment_weight: float = 0.25

    @classmethod
    def init_from(cls, z: np.ndarray, n_stages: int, size: int, rng: np.random.Generator, decay=0.99, eps=1e-5, commitment_weight=0.25):
        """Warm start: each stage samples its codes from the residuals of a batch."""
        z = np.asarray(z, dtype=np.float64).reshape(-1, z.shape[-1])
        stages = []
        resid = z.copy()
        for s in range(n_stages):
            rows = rng.choice(len(resid), size=size, replace=len(resid) < size)
            cb = Codebook.from_codes(resid[rows], decay, eps, frozen_zero=s > 0)
            stages.append(cb)
            resid = resid - cb.codes[nearest_codes(cb.codes, resid)]
        return cls(stages, commitment_weight)

    @property
    def dim(self) -> int:
        return self.stages[0].dim


@dataclass
class RVQOutput:
    out: Tensor  # straight-through quantized vectors
    z_q: np.ndarray
    indices: list[np.ndarray]
    residuals: list[np.ndarray]  # input of each stage, for EMA
    commit: Tensor  # unweighted sum of per-stage commitment losses


def residual_quantize(rvq: ResidualVQ, z_e: Tensor, frozen: list[np.ndarray] | None = None, offset: np.ndarray | None = None) -> RVQOutput:
    """Quantize ``z_e [..., D]`` through every stage.

    ``frozen`` replays given per-stage indices instead of searching. ``offset``
    replaces the quantized output with ``z_e + offset`` (a constant); together
    they give a locally smooth twin of the layer for finite-difference checks.
    """
    if not rvq.stages:
        raise ValueError("residual_quantize: no stages")
    if z_e.shape[-1] != rvq.dim:
        raise ShapeError(f"residual_quantize: vectors of dim {z_e.shape[-1]}, codebooks of dim {rvq.dim}")
    total = np.zeros(z_e.shape)
    resid_t = z_e
    commit = None
    indices, residuals = [], []
    for s, cb in enumerate(rvq.stages):
        if frozen is not None:
            idx = frozen[s]
            part = cb.codes[idx]
            loss = commitment(resid_t, part)
        else:
            part, idx, loss = quantize(cb, resid_t)
        indices.append(idx)
        residuals.append(resid_t.data)
        commit = loss if commit is None else commit + loss
        total = total + part
        resid_t = resid_t - Tensor(part)
    if offset is not None:
        out = z_e + Tensor(offset)
    else:
        out = straight_through(z_e, total)
    return RVQOutput(out, total, indices, residuals, commit)


def rvq_ema_update(rvq: ResidualVQ, result: RVQOutput, rng=None, dead_after=None) -> None:
    for cb, r, idx in zip(rvq.stages, result.residuals, result.indices):
        ema_update(cb, r, idx, rng=rng, dead_after=dead_after)
