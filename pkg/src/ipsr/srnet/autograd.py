"""Minimal reverse-mode autodiff over numpy arrays.

Each op returns a ``Tensor`` holding its parents and a closure that maps the
output gradient to parent gradients. ``backward`` walks the graph in reverse
topological order.
"""

from __future__ import annotations

import numpy as np

from . import ops


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg

    # arithmetic sugar for the loss expressions
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_tensor(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    return Tensor(out, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def abs_(a: Tensor) -> Tensor:
    return Tensor(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor(a.data.mean(), (a,), lambda g: (np.full_like(a.data, g / n),))


def relu(a: Tensor) -> Tensor:
    return Tensor(ops.relu(a.data), (a,), lambda g: (g * (a.data > 0),))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ops.conv2d(x.data, w.data, None if b is None else b.data)

    def back(g):
        gx, gw, gb = ops.conv2d_backward(x.data, w.data, g)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents, back)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    out = ops.conv_transpose2d(x.data, w.data, None if b is None else b.data, stride, padding)

    def back(g):
        gx, gw, gb = ops.conv_transpose2d_backward(x.data, w.data, g, stride, padding)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents, back)


def depth_to_space(x: Tensor, r: int) -> Tensor:
    return Tensor(ops.depth_to_space(x.data, r), (x,), lambda g: (ops.space_to_depth(g, r),))


def space_to_depth(x: Tensor, r: int) -> Tensor:
    return Tensor(ops.space_to_depth(x.data, r), (x,), lambda g: (ops.depth_to_space(g, r),))


def concat(xs, axis: int = 1) -> Tensor:
    sizes = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return Tensor(ops.concat([t.data for t in xs], axis), tuple(xs),
                  lambda g: tuple(np.split(g, sizes, axis=axis)))


def filter_valid(x: Tensor, taps: np.ndarray) -> Tensor:
    """Separable 'valid' correlation of the last two axes (fixed taps)."""
    n = taps.size
    h, w = x.shape[-2] - n + 1, x.shape[-1] - n + 1
    if h < 1 or w < 1:
        raise ValueError(f"input {x.shape[-2:]} smaller than the {n}-tap window")
    rows = sum(taps[i] * x.data[..., i : i + h, :] for i in range(n))
    out = sum(taps[j] * rows[..., :, j : j + w] for j in range(n))

    def back(g):
        grows = np.zeros_like(rows)
        for j in range(n):
            grows[..., :, j : j + w] += taps[j] * g
        gx = np.zeros_like(x.data, dtype=g.dtype)
        for i in range(n):
            gx[..., i : i + h, :] += taps[i] * grows
        return (gx,)

    return Tensor(out, (x,), back)


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def fake_quantize_array(x: np.ndarray, scale: float, zero_point: int) -> np.ndarray:
    q = np.clip(_round_half_away(x / scale) + zero_point, 0, 255)
    return ((q - zero_point) * scale).astype(x.dtype, copy=False)


def fake_quantize(x: Tensor, scale: float, zero_point: int) -> Tensor:
    """Quantize-dequantize with a straight-through gradient inside the range."""
    if not scale > 0:
        raise ValueError("quantization scale must be positive")
    lo, hi = (0 - zero_point) * scale, (255 - zero_point) * scale
    inside = (x.data >= lo - scale / 2) & (x.data <= hi + scale / 2)
    return Tensor(fake_quantize_array(x.data, scale, zero_point), (x,), lambda g: (g * inside,))
