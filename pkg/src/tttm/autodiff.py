"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery for the graph network: a :class:`Tensor` wraps a
float64 array, records the op that produced it, and :func:`backward`
walks the tape once to accumulate gradients into the leaves. Everything
is double precision and purely sequential, which keeps training bitwise
reproducible for a fixed seed.

Shapes are deliberately boring: matmul takes 2-D operands only (vectors
travel as column matrices) and broadcasting is limited to what numpy
does, with gradients summed back over the broadcast axes.
"""
from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "leaf", "const", "concat", "backward"]


class Tensor:
    """Node in the computation tape."""

    __slots__ = ("value", "grad", "parents", "vjp", "needs_grad")

    def __init__(self, value, parents=(), vjp=None, needs_grad=False):
        self.value = np.asarray(value, dtype=float)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = parents
        self.vjp = vjp  # callable(upstream) -> tuple of parent gradients
        self.needs_grad = needs_grad or any(p.needs_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return mul(self, const(-1.0))

    def __getitem__(self, key):
        return getitem(self, key)


def leaf(value) -> Tensor:
    """Trainable tensor; gradients accumulate here."""
    return Tensor(value, needs_grad=True)


def const(value) -> Tensor:
    """Data tensor; backward never descends into it."""
    return Tensor(value)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else const(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` along the axes numpy broadcast over."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.value + b.value, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(a.value - b.value, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Tensor(a.value * b.value, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        da = _unbroadcast(g / b.value, a.shape)
        db = _unbroadcast(-g * a.value / (b.value**2), b.shape)
        return da, db

    return Tensor(a.value / b.value, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError(
            f"matmul expects 2-D operands, got {a.value.shape} @ {b.value.shape}"
        )

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return Tensor(a.value @ b.value, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    def vjp(g):
        return (g.T,)

    return Tensor(a.value.T, (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return Tensor(a.value.reshape(shape), (a,), vjp)


def getitem(a: Tensor, key) -> Tensor:
    def vjp(g):
        out = np.zeros_like(a.value)
        out[key] = g
        return (out,)

    return Tensor(a.value[key], (a,), vjp)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)

    def vjp(g):
        return (g * (1.0 - out**2),)

    return Tensor(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-np.clip(a.value, -60.0, 60.0)))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)

    def vjp(g):
        return (g * out,)

    return Tensor(out, (a,), vjp)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    mask = np.where(a.value > 0, 1.0, slope)

    def vjp(g):
        return (g * mask,)

    return Tensor(np.where(a.value > 0, a.value, slope * a.value), (a,), vjp)


def square(a: Tensor) -> Tensor:
    def vjp(g):
        return (g * 2.0 * a.value,)

    return Tensor(a.value**2, (a,), vjp)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    def vjp(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(a.value.sum(axis=axis, keepdims=True), (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    size = a.value.size

    def vjp(g):
        return (np.full(a.shape, float(g) / size),)

    return Tensor(a.value.mean(), (a,), vjp)


def softmax_rows(a: Tensor) -> Tensor:
    """Row softmax of a 2-D tensor, numerically shifted by the row max.

    The shift uses the detached row maximum, which leaves both the value
    and the gradient exact because softmax is shift invariant. Rows whose
    entries are all very negative (additively masked) come out
    essentially zero.
    """
    shift = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shift)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, (a,), vjp)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``.

    ``root`` must be scalar shaped. Grads of earlier calls are kept, so
    zero them between steps.
    """
    if root.value.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")

    # iterative topological order over the needs_grad subgraph
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)
            node.grad += g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.needs_grad:
                continue
            acc = grads.get(id(parent))
            # never mutate a stored gradient in place; vjp outputs may alias
            grads[id(parent)] = pg if acc is None else acc + pg
