"""Small parameter containers built on :mod:`fusionsf.tensor`."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Collects parameters from attributes (tensors, modules, lists of modules)."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _param(arr, name=None) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = _param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = _param(np.zeros(d_out)) if bias else None
        self.d_in, self.d_out = d_in, d_out

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.ShapeError(f"Linear expects last dim {self.d_in}, got shape {x.shape}")
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = _param(np.ones(dim))
        self.beta = _param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Linear -> GELU -> Linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class FeedForward(Module):
    """Transformer feed-forward block; GEGLU gating when ``use_glu``."""

    def __init__(self, dim: int, mult: int, rng: np.random.Generator, use_glu: bool = True, dropout: float = 0.0):
        hidden = dim * mult
        self.use_glu = use_glu
        self.hidden = hidden
        self.fc1 = Linear(dim, 2 * hidden if use_glu else hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.p = dropout

    def __call__(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        h = self.fc1(x)
        if self.use_glu:
            h = h[..., : self.hidden] * T.gelu(h[..., self.hidden :])
        else:
            h = T.gelu(h)
        h = T.dropout(h, self.p, training, rng)
        return self.fc2(h)
