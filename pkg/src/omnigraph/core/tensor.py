"""Define-by-run reverse-mode autodiff over dense float64 arrays.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient.  Outside a tape they only compute
values, which is what evaluation code relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels

_TAPES: list["Tape"] = []


class Tensor:
    """A float64 array, optionally a leaf that wants gradients."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    __hash__ = object.__hash__

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class TapeNode:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable


class Tape:
    """Ordered record of primitive ops; use as a context manager.

    >>> with Tape() as tape:
    ...     y = x * x
    >>> grads = tape.backward(y)
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._produced: set[int] = set()

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, kind, inputs, output, backward):
        self.nodes.append(TapeNode(kind, inputs, output, backward))
        self._produced.add(id(output))

    def backward(self, loss: Tensor) -> dict:
        """Gradients of the scalar ``loss`` for every leaf that requires grad."""
        if id(loss) not in self._produced:
            raise ValueError("loss is not on this tape")
        if loss.size != 1:
            raise ValueError("loss must be a scalar")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key not in self._produced:
                    leaves[key] = inp
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
        return {t: grads[k] for k, t in leaves.items() if k in grads}


def _active_tape():
    return _TAPES[-1] if _TAPES else None


def _make(kind, data, inputs, backward):
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(kind, inputs, out, backward)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a, p: float):
    a = as_tensor(a)
    return _make("pow", a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(a):
    """log(sigmoid(a)) without overflow for large ``|a|``."""
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    return _make("log_sigmoid", out, (a,), lambda g: (g * _sigmoid(-a.data),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make("relu", a.data * mask, (a,), lambda g: (g * mask,))


def elu(a, alpha=1.0):
    a = as_tensor(a)
    x = a.data
    neg_part = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg_part)
    slope = np.where(x > 0, 1.0, neg_part + alpha)
    return _make("elu", out, (a,), lambda g: (g * slope,))


# reductions and shape ------------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", out, (a,), back)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a):
    a = as_tensor(a)
    return _make("transpose", a.data.T, (a,), lambda g: (g.T,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return _make("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, tuple(tensors), back)


def take_rows(a, index):
    """Gather rows ``a[index]``; the backward pass is a scatter-add."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]
    return _make("take_rows", a.data[index], (a,),
                 lambda g: (kernels.scatter_add(index, g, n),))


def segment_sum(a, index, n):
    """Sum rows of ``a`` into ``n`` segments; inverse of :func:`take_rows`."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    return _make("segment_sum", kernels.scatter_add(index, a.data, n), (a,),
                 lambda g: (g[index],))


# composite primitives with hand-written gradients --------------------------

def softmax(a, axis=-1):
    a = as_tensor(a)
    if a.size == 0 or a.shape[axis] == 0:
        raise ValueError("empty softmax")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    out = ez / ez.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (a,), back)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    if a.size == 0 or a.shape[axis] == 0:
        raise ValueError("empty softmax")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out)
    return _make("log_softmax", out, (a,),
                 lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def segment_softmax(scores, index, n):
    """Softmax of ``scores`` rows within each segment ``index`` (column-wise)."""
    scores = as_tensor(scores)
    index = np.asarray(index, dtype=np.int64)
    if scores.shape[0] == 0:
        return _make("segment_softmax", scores.data.copy(), (scores,), lambda g: (g,))
    peak = kernels.segment_max(index, scores.data, n)
    ez = np.exp(scores.data - peak[index])
    denom = kernels.scatter_add(index, ez, n)
    out = ez / denom[index]

    def back(g):
        inner = kernels.scatter_add(index, g * out, n)
        return (out * (g - inner[index]),)

    return _make("segment_softmax", out, (scores,), back)


def cosine_rows(a, b):
    """Row-wise cosine similarity; rows with zero norm give 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"cosine shape mismatch {a.shape} vs {b.shape}")
    dot = (a.data * b.data).sum(axis=-1)
    na = np.sqrt((a.data * a.data).sum(axis=-1))
    nb = np.sqrt((b.data * b.data).sum(axis=-1))
    denom = na * nb
    ok = denom > 0
    safe = np.where(ok, denom, 1.0)
    out = np.where(ok, dot / safe, 0.0)

    def back(g):
        gs = (g * ok / safe)[..., None]
        ca = np.where(ok, out / np.where(na > 0, na * na, 1.0), 0.0)[..., None]
        cb = np.where(ok, out / np.where(nb > 0, nb * nb, 1.0), 0.0)[..., None]
        return (gs * b.data - (g[..., None] * ca) * a.data,
                gs * a.data - (g[..., None] * cb) * b.data)

    return _make("cosine", out, (a, b), back)


def nll_loss(log_probs, labels):
    """Mean negative log-likelihood of integer ``labels`` under row log-distributions."""
    log_probs = as_tensor(log_probs)
    labels = np.asarray(labels, dtype=np.int64)
    if log_probs.ndim != 2:
        raise ValueError("log_probs must be B x C")
    B, C = log_probs.shape
    if labels.shape != (B,):
        raise ValueError("labels must have one entry per row")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label out of range [0, {C})")
    rows = np.arange(B)
    out = -log_probs.data[rows, labels].mean()

    def back(g):
        grad = np.zeros_like(log_probs.data)
        grad[rows, labels] = -g / B
        return (grad,)

    return _make("nll", out, (log_probs,), back)


def dropout(a, p, training, rng):
    """Inverted dropout; identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make("dropout", a.data * keep, (a,), lambda g: (g * keep,))
