"""Minimal reverse-mode differentiation over float64 numpy arrays.

A :class:`Tensor` records the op that produced it together with a closure
mapping the output gradient to gradients of its parents.  Library ops accept
either plain arrays or tensors; they return plain arrays when no tensor is
involved, so the same code serves pure evaluation and training.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "as_array",
    "is_tensor",
    "wrap",
    "tanh",
    "artanh",
    "sqrt",
    "exp",
    "log",
    "log1p",
    "relu",
    "tsum",
    "where",
    "clamp_min",
    "clip",
    "concat",
]


def as_array(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in a recorded computation."""

    # make numpy defer to the reflected operators instead of building object arrays
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = parents
        self._backward = backward

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # ---------------------------------------------------------------- backward
    def backward(self, grad=None):
        """Accumulate gradients into every upstream tensor with ``requires_grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise RuntimeError("tensor does not depend on any parameter requiring grad")

        order = []
        seen = set()
        stack = [(self, False)]
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
                if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not isinstance(p, Tensor) or not p.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), p.data.shape)
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ------------------------------------------------------------- arithmetic
    def __add__(self, other):
        return wrap(as_array(self) + as_array(other), (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        return wrap(as_array(self) - as_array(other), (self, other), lambda g: (g, -g))

    def __rsub__(self, other):
        return wrap(as_array(other) - self.data, (other, self), lambda g: (g, -g))

    def __mul__(self, other):
        a, b = self.data, as_array(other)
        return wrap(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self.data, as_array(other)
        return wrap(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        a, b = as_array(other), self.data
        return wrap(a / b, (other, self), lambda g: (g / b, -g * a / (b * b)))

    def __neg__(self):
        return wrap(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, k):
        if not np.isscalar(k):
            raise TypeError("only scalar exponents are supported")
        a = self.data
        return wrap(a**k, (self,), lambda g: (g * k * a ** (k - 1),))

    def __matmul__(self, other):
        a, b = self.data, as_array(other)
        if b.ndim == 1 or a.ndim == 1:
            raise ValueError("matmul expects operands with ndim >= 2")

        def back(g):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return ga, gb

        return wrap(a @ b, (self, other), back)

    def __rmatmul__(self, other):
        a, b = as_array(other), self.data

        def back(g):
            return g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g

        return wrap(a @ b, (other, self), back)

    # ----------------------------------------------------------------- shapes
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        orig = self.data.shape
        return wrap(self.data.reshape(shape), (self,), lambda g: (g.reshape(orig),))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return wrap(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    def __getitem__(self, idx):
        shape = self.data.shape

        parts = idx if isinstance(idx, tuple) else (idx,)
        basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in parts)

        def back(g):
            out = np.zeros(shape)
            if basic:
                out[idx] = g
            else:
                np.add.at(out, idx, g)
            return (out,)

        return wrap(self.data[idx], (self,), back)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return tsum(self, axis=axis, keepdims=keepdims) / float(n)


def wrap(out, parents, backward):
    """Return ``out`` as a recorded tensor if any parent is a tensor, else as an array."""
    tensors = [p for p in parents if isinstance(p, Tensor)]
    if not tensors:
        return out
    needs = any(p.requires_grad for p in tensors)
    if not needs:
        return Tensor(out)
    return Tensor(out, requires_grad=True, parents=tuple(parents), backward=backward)


# ---------------------------------------------------------------- functions
def tanh(x):
    y = np.tanh(as_array(x))
    return wrap(y, (x,), lambda g: (g * (1.0 - y * y),))


def artanh(x):
    a = as_array(x)
    return wrap(np.arctanh(a), (x,), lambda g: (g / (1.0 - a * a),))


def sqrt(x):
    y = np.sqrt(as_array(x))
    return wrap(y, (x,), lambda g: (g * 0.5 / y,))


def exp(x):
    y = np.exp(as_array(x))
    return wrap(y, (x,), lambda g: (g * y,))


def log(x):
    a = as_array(x)
    return wrap(np.log(a), (x,), lambda g: (g / a,))


def log1p(x):
    a = as_array(x)
    return wrap(np.log1p(a), (x,), lambda g: (g / (1.0 + a),))


def relu(x):
    a = as_array(x)
    mask = a > 0
    return wrap(np.where(mask, a, 0.0), (x,), lambda g: (g * mask,))


def tsum(x, axis=None, keepdims=False):
    a = as_array(x)
    out = a.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return wrap(out, (x,), back)


def where(cond, x, y):
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, as_array(x), as_array(y))
    return wrap(out, (x, y), lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)))


def clamp_min(x, lo):
    a = as_array(x)
    mask = a >= lo
    return wrap(np.where(mask, a, lo), (x,), lambda g: (g * mask,))


def clip(x, lo, hi):
    a = as_array(x)
    mask = (a >= lo) & (a <= hi)
    return wrap(np.clip(a, lo, hi), (x,), lambda g: (g * mask,))


def concat(xs, axis=0):
    arrays = [as_array(x) for x in xs]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return wrap(out, tuple(xs), back)
