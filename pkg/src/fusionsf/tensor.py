"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a backward rule. Calling :func:`backward` on a scalar loss
orders the recorded graph topologically and replays the rules in reverse,
accumulating gradients additively into the leaf tensors that asked for them.

The graph is rebuilt on every forward pass. Randomness (dropout) is always
drawn from an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NumericError",
    "ShapeError",
    "GraphError",
    "tensor",
    "zeros",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "reshape",
    "permute",
    "concat",
    "mean",
    "sum",
    "exp",
    "softmax",
    "layer_norm",
    "gelu",
    "dropout",
    "take",
    "straight_through",
    "stop_gradient",
    "backward",
    "zero_grad",
    "record",
    "SQRT_2_OVER_PI",
]

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class NumericError(FloatingPointError):
    """A non-finite value appeared in a forward or backward computation."""


class GraphError(RuntimeError):
    """The recorded graph cannot be differentiated as requested."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """N-dimensional float64 array that can take part in a gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_released")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.isfinite(arr).all():
            raise NumericError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._released = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return stop_gradient(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ops that only move existing (already checked) values around
_MOVES = frozenset({"reshape", "permute", "concat", "getitem", "take"})


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a single reduction propagates any NaN/Inf
    if op not in _MOVES and not math.isfinite(arr.sum()):
        raise NumericError(f"{op} produced a non-finite value")


def _make(data: np.ndarray, parents: Sequence[Tensor], rule, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._released = False
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = rule
    else:
        out._parents = ()
        out._backward = None
    return out


def record(data: np.ndarray, parents: Sequence[Tensor], rule, op: str) -> Tensor:
    """Wrap ``data`` as the output of a custom op whose backward is ``rule``.

    ``rule`` maps the output gradient to one gradient (or ``None``) per parent.
    """
    return _make(np.asarray(data, dtype=np.float64), parents, rule, op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or not sa or not sb:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def rule(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad * bd, (a, b), rule, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd

    def rule(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), rule, "div")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ba, bb = a.shape[:-2], b.shape[:-2]
    try:
        if ba != bb and ba and bb:
            np.broadcast_shapes(ba, bb)
    except ValueError:
        raise ShapeError(f"matmul: batch shapes {a.shape} and {b.shape} do not conform") from None
    ad, bd = a.data, b.data
    if bd.ndim == 2 and ad.ndim > 2:
        # a stack of rows times one matrix: flatten to a single GEMM
        flat = ad.reshape(-1, ad.shape[-1])

        def rule(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = flat.T @ g2 if b.requires_grad else None
            return ga, gb

        return _make((flat @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],)), (a, b), rule, "matmul")

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), rule, "matmul")


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {src} into {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "permute")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no tensors given")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax):
            raise ShapeError(f"concat(axis={axis}): shapes {tensors[0].shape} and {t.shape} do not conform")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors, rule, "concat")


def _getitem(x: Tensor, index) -> Tensor:
    src = x.shape

    items = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)

    def rule(g):
        full = np.zeros(src)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(x.data[index]), (x,), rule, "getitem")


def take(x: Tensor, indices: np.ndarray, axis: int, unique: bool = False) -> Tensor:
    """Gather along ``axis``.

    With ``indices`` of the same rank as ``x`` this is ``np.take_along_axis``,
    otherwise ``np.take``. ``unique=True`` promises no repeated index along the
    axis, which allows a cheaper scatter in the backward pass.
    """
    indices = np.asarray(indices, dtype=np.intp)
    src = x.shape
    ax = axis % x.ndim
    if indices.ndim == x.ndim:
        out = np.take_along_axis(x.data, indices, axis=ax)

        def rule(g):
            full = np.zeros(src)
            if unique:
                np.put_along_axis(full, indices, g, axis=ax)
            else:
                idx = list(np.indices(indices.shape, sparse=True))
                idx[ax] = indices
                np.add.at(full, tuple(idx), g)
            return (full,)
    else:
        out = np.take(x.data, indices, axis=ax)

        def rule(g):
            full = np.zeros(src)
            sl = [slice(None)] * len(src)
            sl[ax] = indices
            if unique:
                full[tuple(sl)] = g
            else:
                np.add.at(full, tuple(sl), g)
            return (full,)

    return _make(out, (x,), rule, "take")


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    src = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), rule, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean: empty reduction over axis {axis} of shape {x.shape}")
    src = x.shape
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, src).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), rule, "mean")


# ---------------------------------------------------------------- nonlinearities


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtraction) along ``axis``."""
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError(f"softmax: empty axis {axis} for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), rule, "softmax")


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gamma * xhat + beta``."""
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError(f"layer_norm: last axis is empty for shape {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data if gamma is not None else None
    out = xhat * gd if gd is not None else xhat
    if beta is not None:
        out = out + beta.data
    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def rule(g):
        grads = []
        gx = g * gd if gd is not None else g
        if x.requires_grad:
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            grads.append(inv * (gx - m1 - xhat * m2))
        else:
            grads.append(None)
        lead = tuple(range(g.ndim - 1))
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead).reshape(gamma.shape))
        if beta is not None:
            grads.append(g.sum(axis=lead).reshape(beta.shape))
        return grads

    return _make(out, parents, rule, "layer_norm")


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    inner = SQRT_2_OVER_PI * (xd + GELU_CUBIC * xd * xd * xd)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def rule(g):
        d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * d_inner),)

    return _make(out, (x,), rule, "gelu")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout: an explicit rng is required in training mode")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def straight_through(z_e: Tensor, z_q) -> Tensor:
    """Forward value ``z_q``; backward copies the incoming gradient to ``z_e``."""
    zq = z_q.data if isinstance(z_q, Tensor) else np.asarray(z_q, dtype=np.float64)
    if zq.shape != z_e.shape:
        raise ShapeError(f"straight_through: shapes {z_e.shape} and {zq.shape} do not conform")
    return _make(zq.copy(), (z_e,), lambda g: (g,), "straight_through")


def stop_gradient(x: Tensor) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.grad = None
    out.name = x.name
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out._released = False
    return out


# ---------------------------------------------------------------- backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    The graph is consumed: a second call on the same loss raises, and so does a
    call while any reachable leaf still holds a gradient from an earlier pass.
    """
    if loss.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._released:
        raise GraphError("backward: graph already consumed; run a new forward pass")
    if not loss.requires_grad:
        raise GraphError("backward: loss is detached from every parameter")
    order = _topological(loss)
    leaves = [t for t in order if t.is_leaf]
    stale = [t.name or repr(t) for t in leaves if t.grad is not None]
    if stale:
        raise GraphError(f"backward: gradients not reset for {stale[:3]}; call zero_grad first")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            _check_finite(g, f"gradient of {node.name or 'leaf'}")
            node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    for node in order:
        if not node.is_leaf:
            node._backward = None
            node._parents = ()
            node._released = True


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
        p._released = False
