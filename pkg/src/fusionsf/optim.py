"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor, zero_grad


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: OptimizerState) -> None:
    """Update ``params`` in place. A ``None`` gradient counts as zero."""
    if state.lr <= 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise ShapeError("optimizer state does not match the parameter list")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError(f"adamw: parameter {p.name} has shape {p.shape}, gradient {g.shape}")
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class AdamW:
    def __init__(self, params: Sequence[Tensor], lr=1e-3, weight_decay=0.05, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        zero_grad(self.params)
