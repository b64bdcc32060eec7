"""Reverse-mode automatic differentiation over float64 NumPy arrays.

Only the operations the policy and critic need are provided.  Every op
returns a new :class:`Tensor` whose ``_backward`` closure maps the upstream
gradient to gradients for its parents.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from fragforge import kernels

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    __add__ = lambda a, b: add(a, b)  # noqa: E731
    __radd__ = lambda a, b: add(b, a)  # noqa: E731
    __sub__ = lambda a, b: sub(a, b)  # noqa: E731
    __rsub__ = lambda a, b: sub(b, a)  # noqa: E731
    __mul__ = lambda a, b: mul(a, b)  # noqa: E731
    __rmul__ = lambda a, b: mul(b, a)  # noqa: E731
    __truediv__ = lambda a, b: div(a, b)  # noqa: E731
    __neg__ = lambda a: neg(a)  # noqa: E731
    __matmul__ = lambda a, b: matmul(a, b)  # noqa: E731

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, True, None, parents, backward_fn)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def backward(loss: Tensor, params=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Tensors in ``params`` that the loss does not reach get a zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
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
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for p in params or ():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


# -- elementwise ------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (_unbroadcast(g / b.data, a.shape),
                                         _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a):
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a):
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a):
    x = a.data
    out = -np.logaddexp(0.0, -x)
    return _make(out, (a,), lambda g: (g * _sigmoid(-x),))


_LOG2 = math.log(2.0)


def shifted_softplus(a):
    """softplus(x) - log 2, zero at the origin."""
    x = a.data
    return _make(np.logaddexp(0.0, x) - _LOG2, (a,), lambda g: (g * _sigmoid(x),))


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def clip(a, lo: float, hi: float):
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a, b):
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _make(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def zero_where(a, keep: np.ndarray):
    """Entries outside ``keep`` become 0 and receive no gradient."""
    keep = np.asarray(keep, dtype=bool)
    return _make(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,))


# -- reductions and shape ---------------------------------------------------

def sum_(a, axis=None):
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)
    return _make(a.data.sum(axis=axis), (a,), bw)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    def bw(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _make(a.data @ b.data, (a, b), bw)


def concat(tensors, axis: int = -1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def take(a, index):
    """Rows ``a[index]`` along axis 0; gradient scatters back with a segment sum."""
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    return _make(a.data[index], (a,), lambda g: (kernels.segment_sum(g, index, n),))


def segment_sum(a, index, n: int):
    """out[k] = sum of rows a[i] with index[i] == k."""
    index = np.asarray(index, dtype=np.int64)
    return _make(kernels.segment_sum(a.data, index, n), (a,), lambda g: (g[index],))


def segment_log_softmax(logits, segment, n: int, mask):
    """Masked log-softmax of a flat logit vector within each segment.

    Masked entries get ``-inf`` (probability exactly 0) and no gradient.  Every
    segment must contain at least one unmasked entry.
    """
    x = logits.data
    segment = np.asarray(segment, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    counts = np.bincount(segment[mask], minlength=n)
    if np.any(counts == 0):
        raise ValueError("segment with no unmasked entries")
    seg_max = np.full(n, -np.inf)
    np.maximum.at(seg_max, segment[mask], x[mask])
    shifted = np.where(mask, x - seg_max[segment], -np.inf)
    expd = np.exp(shifted)
    lse = np.log(np.bincount(segment, weights=expd, minlength=n))
    out = np.where(mask, shifted - lse[segment], -np.inf)
    prob = np.exp(out)

    def bw(g):
        g = np.where(mask, g, 0.0)
        tot = np.bincount(segment, weights=g, minlength=n)
        return (np.where(mask, g - prob * tot[segment], 0.0),)

    return _make(out, (logits,), bw)


def segment_entropy(logp, segment, n: int, mask):
    """Shannon entropy per segment from masked log-probabilities."""
    safe = zero_where(logp, mask)
    p = zero_where(exp(safe), mask)
    return neg(segment_sum(mul(p, safe), segment, n))
