"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records enough structure to run backward()
from a scalar. Only the operations needed by the training objectives are
implemented. Everything is float64 and single-threaded, so gradients are
bit-reproducible.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "constant", "leaf", "concatenate", "sigmoid", "softmax", "log_softmax"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    # added leading axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    # broadcast along size-1 axes
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    # ------------------------------------------------------------------ util
    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _make(self, data, parents, vjp):
        req = any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=req, parents=parents if req else (), vjp=vjp if req else None)

    # ------------------------------------------------------------ arithmetic
    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._wrap(other)
        out_data = self.data + other.data

        def vjp(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        return self._make(out_data, (self, other), vjp)

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out_data = self.data * other.data

        def vjp(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        return self._make(out_data, (self, other), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        out_data = self.data / other.data

        def vjp(g):
            return (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / other.data**2, other.shape),
            )

        return self._make(out_data, (self, other), vjp)

    def __rtruediv__(self, other):
        return self._wrap(other) / self

    def __pow__(self, exponent: float):
        out_data = self.data**exponent

        def vjp(g):
            return (g * exponent * self.data ** (exponent - 1),)

        return self._make(out_data, (self,), vjp)

    def __matmul__(self, other):
        other = self._wrap(other)
        out_data = self.data @ other.data

        def vjp(g):
            return (g @ other.data.T, self.data.T @ g)

        return self._make(out_data, (self, other), vjp)

    # ------------------------------------------------------------- pointwise
    def exp(self):
        out_data = np.exp(self.data)
        return self._make(out_data, (self,), lambda g: (g * out_data,))

    def log(self):
        return self._make(np.log(self.data), (self,), lambda g: (g / self.data,))

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def vjp(g):
            # derivative clamped at zero inputs (hinge-style callers rely on it)
            denom = np.where(out_data > 0, 2.0 * out_data, np.inf)
            return (g / denom,)

        return self._make(out_data, (self,), vjp)

    def tanh(self):
        out_data = np.tanh(self.data)
        return self._make(out_data, (self,), lambda g: (g * (1.0 - out_data**2),))

    def relu(self):
        out_data = np.maximum(self.data, 0.0)
        return self._make(out_data, (self,), lambda g: (g * (self.data > 0),))

    # ------------------------------------------------------------ reductions
    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        return self._make(out_data, (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ----------------------------------------------------------- structural
    @property
    def T(self):
        return self._make(self.data.T, (self,), lambda g: (g.T,))

    def reshape(self, *shape):
        old = self.shape
        return self._make(
            self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),)
        )

    def __getitem__(self, index):
        out_data = self.data[index]

        def vjp(g):
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            return (full,)

        return self._make(out_data, (self,), vjp)

    # -------------------------------------------------------------- backward
    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo, seen = [], set()

        def visit(node):
            if id(node) in seen or not node.requires_grad:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            topo.append(node)

        visit(self)
        for node in topo:
            node.grad = np.zeros_like(node.data)
        if not self.requires_grad:
            return
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if parent.requires_grad:
                    parent.grad = parent.grad + g


def constant(data) -> Tensor:
    """A tensor that never receives gradient (stop-gradient wrapper)."""
    return Tensor(data)


def leaf(data) -> Tensor:
    """A differentiable input whose .grad is populated by backward()."""
    return Tensor(data, requires_grad=True)


def concatenate(tensors, axis=0) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        pieces = []
        for start, stop in zip(offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    req = any(t.requires_grad for t in tensors)
    return Tensor(out_data, requires_grad=req, parents=tuple(tensors) if req else (), vjp=vjp if req else None)


def sigmoid(t: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-t.data))
    return t._make(out_data, (t,), lambda g: (g * out_data * (1.0 - out_data),))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max shift is a constant, which leaves
    both the value and the gradient exact."""
    shift = constant(np.max(t.data, axis=axis, keepdims=True))
    e = (t - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    shift = constant(np.max(t.data, axis=axis, keepdims=True))
    s = t - shift
    return s - s.exp().sum(axis=axis, keepdims=True).log()
