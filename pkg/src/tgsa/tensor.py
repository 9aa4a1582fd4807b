"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is define-by-run: every operation on a gradient-tracking tensor
records an ``OpRecord`` (op name, input refs, output ref, backward closure
holding the saved intermediates), and ``backward`` replays the records in
reverse topological order, accumulating gradients into the leaves.

Tensors are value-semantic and safe to hand between threads; a recorded
graph ("tape") and the tensors on it form a single-threaded unit of work.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, GradientError, ShapeError


class Tensor:
    """Dense float64 array with optional gradient tracking.

    ``grad`` is allocated as a zero buffer for gradient-tracking leaves and
    accumulated with ``+=`` on every backward pass; intermediate results
    carry gradients only transiently inside ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(arr) if requires_grad else None
        self.op: Optional[OpRecord] = None
        self.name = name

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
        return self.op is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a one-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # Arithmetic sugar; all graph building goes through the module functions.
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


@dataclass
class OpRecord:
    """One recorded operation: id, input refs, output ref, backward closure."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    grad_fn: Callable[[np.ndarray], tuple[Optional[np.ndarray], ...]]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = True


class no_grad:
    """Context manager suppressing op recording (inference-only forwards)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], grad_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.grad = None  # only leaves keep a persistent buffer
        out.op = OpRecord(op, inputs, out, grad_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcast to produce it from `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def tape_of(result: Tensor) -> list[OpRecord]:
    """Topologically ordered op records reachable from `result`.

    Every op's inputs are produced by earlier entries; iterating the list in
    reverse visits each op exactly once, which is what ``backward`` does.
    """
    order: list[OpRecord] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(result, False)]
    while stack:
        node, expanded = stack.pop()
        if node.op is None:
            continue
        if expanded:
            order.append(node.op)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.op.inputs:
            stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every gradient-tracking leaf reachable from `loss`.

    Shared inputs accumulate (+=); repeated backward calls accumulate too,
    so call ``zero_grad`` between optimization steps.
    """
    if not isinstance(loss, Tensor):
        raise GradientError("backward expects a Tensor")
    if loss.data.size != 1:
        raise GradientError(f"backward requires a scalar loss, got shape {loss.shape}")

    seed = np.ones_like(loss.data)
    if loss.op is None:
        if loss.requires_grad:
            loss.grad = loss.grad + seed if loss.grad is not None else seed
        return

    tape = tape_of(loss)
    pending: dict[int, np.ndarray] = {id(loss): seed}
    for rec in reversed(tape):
        gout = pending.pop(id(rec.output), None)
        if gout is None:
            continue
        for inp, g in zip(rec.inputs, rec.grad_fn(gout)):
            if g is None:
                continue
            if inp.op is not None:
                acc = pending.get(id(inp))
                pending[id(inp)] = g if acc is None else acc + g
            elif inp.requires_grad:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += g


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# binary elementwise ops (broadcasting)
# ---------------------------------------------------------------------------


def _binary(op: str, a, b, fwd, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None
    needs_a, needs_b = a.requires_grad, b.requires_grad

    def grad_fn(g):
        ga = _unbroadcast(da(g, a.data, b.data), a.shape) if needs_a else None
        gb = _unbroadcast(db(g, a.data, b.data), b.shape) if needs_b else None
        return ga, gb

    return _make(op, data, (a, b), grad_fn)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        "div", a, b, np.divide, lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y)
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions do not broadcast, {a.shape} x {b.shape}") from None
    needs_a, needs_b = a.requires_grad, b.requires_grad

    def grad_fn(g):
        ga = gb = None
        if needs_a:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if needs_b:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make("matmul", data, (a, b), grad_fn)


# ---------------------------------------------------------------------------
# unary elementwise ops
# ---------------------------------------------------------------------------


def _unary(op: str, x, fwd_data, dx) -> Tensor:
    x = as_tensor(x)
    data = fwd_data

    def grad_fn(g):
        return (dx(g),)

    return _make(op, data, (x,), grad_fn)


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _unary("neg", x, -x.data, lambda g: -g)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _unary("scale", x, x.data * c, lambda g: g * c)


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _unary("exp", x, y, lambda g: g * y)


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log: input must be strictly positive")
    return _unary("log", x, np.log(x.data), lambda g: g / x.data)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0.0):
        raise DomainError("sqrt: input must be nonnegative")
    y = np.sqrt(x.data)
    return _unary("sqrt", x, y, lambda g: g / (2.0 * np.maximum(y, 1e-300)))


def square(x) -> Tensor:
    x = as_tensor(x)
    return _unary("square", x, x.data * x.data, lambda g: g * 2.0 * x.data)


def relu(x) -> Tensor:
    x = as_tensor(x)
    return _unary("relu", x, np.maximum(x.data, 0.0), lambda g: g * (x.data > 0.0))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _stable_sigmoid(x.data)
    return _unary("sigmoid", x, y, lambda g: g * y * (1.0 - y))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    y = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    return _unary("softplus", x, y, lambda g: g * _stable_sigmoid(x.data))


def clamp_min(x, floor: float) -> Tensor:
    x = as_tensor(x)
    floor = float(floor)
    return _unary("clamp_min", x, np.maximum(x.data, floor), lambda g: g * (x.data > floor))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def abs_elem(x) -> Tensor:
    """Elementwise absolute value; backward is sign(x) with subgradient 0 at 0."""
    x = as_tensor(x)
    return _unary("abs", x, np.abs(x.data), lambda g: _abs_grad(x.data, g))


def _abs_grad(x_data: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Module-level on purpose: the verification suite injects a fault here.
    return g * np.sign(x_data)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _unary("reshape", x, data.copy(), lambda g: g.reshape(x.shape))


def transpose_last2(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"transpose_last2 requires rank >= 2, got {x.shape}")
    return _unary(
        "transpose_last2", x, np.swapaxes(x.data, -1, -2).copy(), lambda g: np.swapaxes(g, -1, -2)
    )


def permute(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of rank {x.ndim}")
    inverse = np.argsort(axes)
    return _unary("permute", x, np.transpose(x.data, axes).copy(), lambda g: np.transpose(g, inverse))


def concat_last(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_last needs at least one tensor")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat_last: leading dims differ, {tensors[0].shape} vs {t.shape}")
    data = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.shape[-1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=-1))

    return _make("concat_last", data, tuple(tensors), grad_fn)


def take(x, indices: np.ndarray) -> Tensor:
    """Gather from a 1-D tensor; output takes the shape of `indices`."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"take expects a 1-D tensor, got {x.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    data = x.data[idx]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make("take", data, (x,), grad_fn)


def scatter_add(x, indices: np.ndarray, length: int) -> Tensor:
    """Adjoint of ``take``: sum entries of `x` into a 1-D result at `indices`."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape != x.shape:
        raise ShapeError(f"scatter_add: index shape {idx.shape} != data shape {x.shape}")
    out = np.zeros(length, dtype=np.float64)
    np.add.at(out, idx, x.data)

    def grad_fn(g):
        return (g[idx],)

    return _make("scatter_add", out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# reductions and normalizations
# ---------------------------------------------------------------------------


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - numpy-style name
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        return (_spread(g, x.shape, axis, keepdims),)

    return _make("sum", np.asarray(data), (x,), grad_fn)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in _axis_tuple(axis, x.ndim)])

    def grad_fn(g):
        return (_spread(g, x.shape, axis, keepdims) / count,)

    return _make("mean", np.asarray(data), (x,), grad_fn)


def _axis_tuple(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _spread(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None and not keepdims:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        for a in sorted(_axis_tuple(axis, len(shape))):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


def softmax_rows(x) -> Tensor:
    """Row-stabilized softmax over the last axis; rows sum to 1."""
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"softmax_rows: last dim must be >= 1, got {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return ((g - inner) * y,)

    return _make("softmax_rows", y, (x,), grad_fn)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization over the last axis, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise DomainError(f"layer_norm: eps must be positive, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} must be ({d},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data
    needs = (x.requires_grad, gain.requires_grad, bias.requires_grad)

    def grad_fn(g):
        gx = ggain = gbias = None
        if needs[0]:
            dxhat = g * gain.data
            gx = (inv / d) * (
                d * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        if needs[1]:
            ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        if needs[2]:
            gbias = g.reshape(-1, d).sum(axis=0)
        return gx, ggain, gbias

    return _make("layer_norm", data, (x, gain, bias), grad_fn)
