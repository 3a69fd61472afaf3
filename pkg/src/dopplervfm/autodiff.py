"""A small array-valued reverse-mode automatic differentiation engine.

Each :class:`Tensor` wraps a numpy array and remembers the tensors it was
computed from together with a closure that pushes its gradient back to them.
Graphs are built eagerly and are single use: call :func:`grad` (or
:meth:`Tensor.backward`) once per forward pass.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=float))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def _accum(self, g):
        if not self.requires_grad:
            return
        # out-of-place so gradients passed through unchanged are never aliased and mutated
        self.grad = g if self.grad is None else self.grad + g

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def backward(g):
            self._accum(_unbroadcast(g, self.shape))
            other._accum(_unbroadcast(g, other.shape))

        out._backward = backward if out.requires_grad else None
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        out._backward = (lambda g: self._accum(-g)) if out.requires_grad else None
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))

        out._backward = backward if out.requires_grad else None
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return self * (1.0 / np.asarray(other, dtype=float))

    def square(self):
        out = Tensor(self.data * self.data, _parents=(self,))
        out._backward = (lambda g: self._accum(2.0 * self.data * g)) if out.requires_grad else None
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor(y, _parents=(self,))
        out._backward = (lambda g: self._accum(g * (1.0 - y * y))) if out.requires_grad else None
        return out

    def huber(self, beta=1.0):
        x = self.data
        ax = np.abs(x)
        small = ax < beta
        out = Tensor(np.where(small, 0.5 * x * x / beta, ax - 0.5 * beta), _parents=(self,))

        def backward(g):
            self._accum(g * np.where(small, x / beta, np.sign(x)))

        out._backward = backward if out.requires_grad else None
        return out

    def abs(self):
        out = Tensor(np.abs(self.data), _parents=(self,))
        out._backward = (lambda g: self._accum(g * np.sign(self.data))) if out.requires_grad else None
        return out

    # -- reductions and shape -------------------------------------------------

    def sum(self, axis=None):
        out = Tensor(self.data.sum(axis=axis), _parents=(self,))

        def backward(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.shape))

        out._backward = backward if out.requires_grad else None
        return out

    def dot(self, other):
        """Inner product with a constant array or tensor of the same shape."""
        return (self * other).sum()

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _parents=(self,))
        out._backward = (lambda g: self._accum(g.reshape(self.shape))) if out.requires_grad else None
        return out

    @property
    def T(self):
        out = Tensor(self.data.T, _parents=(self,))
        out._backward = (lambda g: self._accum(g.T)) if out.requires_grad else None
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], _parents=(self,))

        basic = not any(isinstance(k, (np.ndarray, list)) for k in (idx if isinstance(idx, tuple) else (idx,)))

        def backward(g):
            full = np.zeros(self.shape)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            self._accum(full)

        out._backward = backward if out.requires_grad else None
        return out

    # -- linear algebra -------------------------------------------------------

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ValueError("matmul supports 2-D operands; use linear() for batched input")
        out = Tensor(self.data @ other.data, _parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accum(g @ other.data.T)
            if other.requires_grad:
                other._accum(self.data.T @ g)

        out._backward = backward if out.requires_grad else None
        return out

    # -- driver ---------------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x`` (leading axes are batch)."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    y = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(y, _parents=parents)

    def backward(g):
        if x.requires_grad:
            x._accum(g @ weight.data)
        if weight.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            x2 = x.data.reshape(-1, x.shape[-1])
            weight._accum(g2.T @ x2)
        if bias is not None and bias.requires_grad:
            bias._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))

    out._backward = backward if out.requires_grad else None
    return out


def tangent_tanh(tangent: Tensor, activation: Tensor) -> Tensor:
    """``tangent * (1 - activation**2)``: pushes input tangents through a tanh layer.

    ``activation`` is the tanh output of shape ``(n, k)``; ``tangent`` has shape
    ``(d, n, k)`` or ``(d, 1, k)``.
    """
    a = activation.data
    s = 1.0 - a * a
    # C order keeps the next matmul on the BLAS fast path
    out = Tensor(np.multiply(tangent.data, s, order="C"), _parents=(tangent, activation))

    def backward(g):
        if tangent.requires_grad:
            tangent._accum(_unbroadcast(g * s, tangent.shape))
        if activation.requires_grad:
            activation._accum(-2.0 * a * np.einsum("dnk,dnk->nk", g, np.broadcast_to(tangent.data, g.shape)))

    out._backward = backward if out.requires_grad else None
    return out


def spmv(matrix, x: Tensor) -> Tensor:
    """Sparse (or dense constant) matrix times a vector tensor."""
    x = as_tensor(x)
    out = Tensor(matrix @ x.data, _parents=(x,))
    mt = matrix.T.tocsr() if sp.issparse(matrix) else matrix.T
    out._backward = (lambda g: x._accum(mt @ g)) if out.requires_grad else None
    return out


def scatter(x: Tensor, index, size: int) -> Tensor:
    """Place the entries of vector ``x`` at ``index`` in a zero vector of length ``size``."""
    x = as_tensor(x)
    data = np.zeros(size)
    data[index] = x.data
    out = Tensor(data, _parents=(x,))
    out._backward = (lambda g: x._accum(g[index])) if out.requires_grad else None
    return out


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), _parents=tuple(tensors))

    def backward(g):
        for k, t in enumerate(tensors):
            t._accum(np.take(g, k, axis=axis))

    out._backward = backward if out.requires_grad else None
    return out


def grad(loss: Tensor, params) -> list[np.ndarray]:
    """Gradient of scalar ``loss`` with respect to each tensor in ``params``."""
    if not isinstance(loss, Tensor):
        raise TypeError("loss must be a Tensor")
    loss.backward()
    return [np.zeros(p.shape) if p.grad is None else p.grad for p in params]
