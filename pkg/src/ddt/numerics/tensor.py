"""Dense tensors with reverse-mode differentiation.

Every op records its parents and a closure that maps the output adjoint to
parent adjoints. :func:`backward` walks the recorded graph in reverse
topological order, so each node's adjoint is complete before its parents
are visited.
"""

from __future__ import annotations

import numpy as np

NEG_INF = -1e30
"""Additive mask value. Finite, but ``exp(NEG_INF - m)`` is exactly 0 for any
finite row maximum ``m`` of ordinary magnitude."""

_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch the runtime precision (``float64`` or ``float32``)."""
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported dtype {dtype}")
    _DTYPE = dtype.type


def get_default_dtype():
    return _DTYPE


class ShapeError(ValueError):
    """Raised when an op receives operands whose shapes cannot be combined."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op=""):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

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
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    # operator sugar
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
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Parameter(Tensor):
    """A leaf tensor that always tracks gradients."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.array(data, dtype=_DTYPE), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn, op):
    parents = tuple(parents)
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(op, a, b, fn):
    a, b = as_tensor(a), as_tensor(b)
    try:
        return a, b, fn(a.data, b.data)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if output.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        raise RuntimeError("backward called on a tensor with no recorded graph")

    order, seen, stack = [], set(), [(output, False)]
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

    grads = {id(output): np.ones_like(output.data)}
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
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b, out = _binary("add", a, b, np.add)
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b, out = _binary("sub", a, b, np.subtract)
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b, out = _binary("mul", a, b, np.multiply)
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b):
    a, b, out = _binary("div", a, b, np.divide)
    return _node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def power(a, exponent: float):
    a = as_tensor(a)
    out = a.data**exponent
    return _node(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),), "pow")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    """Square root whose derivative at 0 is taken as 0 instead of infinity."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _node(out, (a,), bw, "sqrt")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid_np(x):
    # split branches keep exp() from overflowing
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    a = as_tensor(a)
    return _node(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), "relu")


def softplus(a):
    a = as_tensor(a)
    x = a.data
    out = np.logaddexp(0.0, x)
    return _node(out, (a,), lambda g: (g * _sigmoid_np(x),), "softplus")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _node(out, (a,), bw, "gelu")


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = np.where(cond, a.data, b.data)
    except ValueError:
        raise ShapeError("where", cond.shape, a.shape, b.shape) from None
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape), _unbroadcast(np.where(cond, 0.0, g), b.shape)),
        "where",
    )


def straight_through(hard, soft):
    """Forward value ``hard``; the adjoint passes unchanged to ``soft``."""
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=_DTYPE)
    if hard.shape != soft.shape:
        raise ShapeError("straight_through", hard.shape, soft.shape)
    return _node(hard.copy(), (soft,), lambda g: (g,), "straight_through")


# ---------------------------------------------------------------- reductions / shape


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _node(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i, j):
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", a.shape, shape) from None
    return _node(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx):
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node(np.array(out), (a,), bw, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *[t.shape for t in tensors]) from None

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tensors, bw, "stack")


def pad(a, pad_width):
    """Zero padding; ``pad_width`` as for :func:`numpy.pad`."""
    a = as_tensor(a)
    out = np.pad(a.data, pad_width)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return _node(out, (a,), lambda g: (g[sl],), "pad")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b, out = _binary("matmul", a, b, np.matmul)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _node(out, (a, b), bw, "matmul")


def softmax(a, axis=-1):
    """Max-shifted softmax; entries at ``NEG_INF`` come out as exact zeros."""
    a = as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), bw, "softmax")


def softmax_np(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)
