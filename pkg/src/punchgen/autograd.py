"""Minimal reverse-mode automatic differentiation on numpy arrays.

Everything the neural modules need is expressed through the primitives
below: a ``Tensor`` wraps a float64 ndarray, records the closure that
propagates its output gradient to its parents, and ``Tensor.backward``
replays the tape in reverse topological order.

All data is kept in float64 so finite-difference gradient checks are
meaningful at tight tolerances.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # collapse leading broadcast axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # collapse axes that were size-1 in the original shape
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the autodiff graph.

    Parameters are Tensors with ``requires_grad=True``; intermediate
    results inherit the flag from their parents. ``_backward`` receives
    the gradient of the loss w.r.t. this node and accumulates into the
    parents' ``.grad`` arrays.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self._backward = None
        self._parents: tuple = ()
        self.name = name

    # ---------------------------------------------------------------- plumbing

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def backward(self, grad: np.ndarray | None = None):
        """Reverse-accumulate gradients from this node through the tape."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---------------------------------------------------------------- operators

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return take_slice(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = 1
            for a in axes:
                n *= self.data.shape[a]
        return tsum(self, axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# -------------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (all this package needs)."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim > 2 or b.data.ndim > 2:
        raise ValueError("matmul supports 1-D and 2-D operands only")
    data = a.data @ b.data

    def backward(grad):
        an, bn = a.data.ndim, b.data.ndim
        if a.requires_grad:
            if an == 2 and bn == 2:
                a._accumulate(grad @ b.data.T)
            elif an == 2 and bn == 1:
                a._accumulate(np.outer(grad, b.data))
            elif an == 1 and bn == 2:
                a._accumulate(grad @ b.data.T)
            else:
                a._accumulate(grad * b.data)
        if b.requires_grad:
            if an == 2 and bn == 2:
                b._accumulate(a.data.T @ grad)
            elif an == 2 and bn == 1:
                b._accumulate(a.data.T @ grad)
            elif an == 1 and bn == 2:
                b._accumulate(np.outer(a.data, grad))
            else:
                b._accumulate(grad * a.data)

    return _make(data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    if isinstance(exponent, Tensor):
        raise TypeError("only constant exponents are supported")
    data = a.data ** exponent

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), backward)


def exp(a) -> Tensor:
    a = _wrap(a)
    data = np.exp(a.data)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = _wrap(a)
    data = np.log(a.data)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad / a.data)

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = _wrap(a)
    data = np.tanh(a.data)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * (1.0 - data * data))

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * data * (1.0 - data))

    return _make(data, (a,), backward)


def relu(a) -> Tensor:
    a = _wrap(a)
    data = np.maximum(a.data, 0.0)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * (a.data > 0))

    return _make(data, (a,), backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _wrap(a)
    data = np.where(a.data > 0, a.data, slope * a.data)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad * np.where(a.data > 0, 1.0, slope))

    return _make(data, (a,), backward)


# -------------------------------------------------------------------- shape ops


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(grad):
        if not a.requires_grad:
            return
        g = grad
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), backward)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad.reshape(a.data.shape))

    return _make(data, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    data = np.transpose(a.data, axes)

    def backward(grad):
        if a.requires_grad:
            if axes is None:
                a._accumulate(np.transpose(grad))
            else:
                inv = np.argsort(axes)
                a._accumulate(np.transpose(grad, inv))

    return _make(data, (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * grad.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(grad[tuple(idx)])

    return _make(data, tuple(tensors), backward)


def take_slice(a, idx) -> Tensor:
    """Basic and integer-array indexing with gradient scatter-add."""
    a = _wrap(a)
    data = a.data[idx]

    def backward(grad):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, grad)
            a._accumulate(g)

    return _make(data, (a,), backward)


def embedding(table, ids) -> Tensor:
    """Row lookup `table[ids]` with scatter-add gradient into the table."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.intp)
    data = table.data[ids]

    def backward(grad):
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, ids, grad)
            table._accumulate(g)

    return _make(data, (table,), backward)


# -------------------------------------------------------------------- softmax family


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(grad):
        if a.requires_grad:
            inner = (grad * data).sum(axis=axis, keepdims=True)
            a._accumulate(data * (grad - inner))

    return _make(data, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad - soft * grad.sum(axis=axis, keepdims=True))

    return _make(data, (a,), backward)


def cross_entropy_sum(logits, targets) -> Tensor:
    """Summed token cross-entropy.

    logits: (t, V) Tensor, targets: (t,) int array. Returns a scalar
    Tensor equal to -sum_i log softmax(logits)_i[targets_i].
    """
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.intp)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(targets.shape[0])
    data = -logp[rows, targets].sum()

    def backward(grad):
        if logits.requires_grad:
            g = np.exp(logp)
            g[rows, targets] -= 1.0
            logits._accumulate(g * grad)

    return _make(np.asarray(data), (logits,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat * gain.data + bias.data

    def backward(grad):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(grad * xhat, gain.data.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(grad, bias.data.shape))
        if x.requires_grad:
            d = x.data.shape[-1]
            dxhat = grad * gain.data
            gx = inv * (dxhat
                        - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(gx)

    return _make(data, (x, gain, bias), backward)


# -------------------------------------------------------------------- init helpers


def xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """Glorot/Xavier uniform init for a weight matrix of the given shape."""
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def parameter(rng: np.random.Generator, shape, name: str | None = None) -> Tensor:
    return Tensor(xavier_uniform(rng, shape), requires_grad=True, name=name)
