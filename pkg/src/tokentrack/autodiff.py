"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough ops for a small encoder-decoder transformer: broadcast
arithmetic, matmul, reshape/transpose/slice/concat, softmax, logsumexp,
GELU, layer norm and embedding lookup.  Gradients are accumulated by a
single topological backward pass from a scalar loss.
"""

from __future__ import annotations

import math

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node in the computation graph wrapping an ndarray."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- graph traversal ---------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar; fills .grad on every graph node."""
        if self.data.size != 1:
            raise ValueError("backward() is only defined for scalar outputs")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                # accumulation always rebinds, never mutates, so views are safe
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = ensure_tensor(other)
        return Tensor(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, self.data.shape), _unbroadcast(g, other.data.shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-ensure_tensor(other))

    def __mul__(self, other):
        other = ensure_tensor(other)
        return Tensor(
            self.data * other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.data.shape),
                _unbroadcast(g * self.data, other.data.shape),
            ),
        )

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = ensure_tensor(other)
        a, b = self.data, other.data
        return Tensor(
            a @ b,
            (self, other),
            lambda g: (
                _unbroadcast(g @ b.swapaxes(-1, -2), a.shape),
                _unbroadcast(a.swapaxes(-1, -2) @ g, b.shape),
            ),
        )

    def __getitem__(self, idx):
        def bwd(g):
            out = np.zeros_like(self.data)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], (self,), bwd)

    # -- shape manipulation ------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(self.data.shape),)
        )

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return Tensor(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    def sum(self, axis=None, keepdims=False):
        def bwd(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.data.shape).copy(),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return ((g - (g * y).sum(axis=axis, keepdims=True)) * y,)

    return Tensor(y, (x,), bwd)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    soft = e / s

    def bwd(g):
        return (np.expand_dims(g, axis) * soft,)

    return Tensor(out, (x,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU (smooth, so finite differences stay honest)."""
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    y = 0.5 * v * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v**2)
        dy = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * dinner
        return (g * dy,)

    return Tensor(y, (x,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd
    y = xhat * gamma.data + beta.data

    def bwd(g):
        dxhat = g * gamma.data
        dx = invstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        axes = tuple(range(g.ndim - 1))
        return (dx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return Tensor(y, (x, gamma, beta), bwd)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup into a (V, d) table; gradient is scatter-add."""
    idx = np.asarray(idx)

    def bwd(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(table.data[idx], (table,), bwd)


def take_along_last(x: Tensor, idx: np.ndarray) -> Tensor:
    """x[..., idx[...]] with idx.shape == x.shape[:-1]."""
    idx = np.asarray(idx)
    picked = np.take_along_axis(x.data, idx[..., None], axis=-1)[..., 0]

    def bwd(g):
        out = np.zeros_like(x.data)
        np.put_along_axis(out, idx[..., None], g[..., None], axis=-1)
        return (out,)

    return Tensor(picked, (x,), bwd)
