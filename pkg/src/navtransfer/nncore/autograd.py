"""Tape-based reverse-mode differentiation over a fixed operator vocabulary.

Every operator takes and returns :class:`Var`. A ``Var`` holds a numpy array
and, when it depends on a trainable leaf, a closure mapping its output
gradient to gradients for its parents. Nothing here is generic: the operator
set is exactly what the encoder, recurrent core, heads and losses need.
"""

import numba
import numpy as np

from ..errors import NumericInputError, ShapeError

LOG_EPS = 1e-8


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "param")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, param=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def const(value, dtype=np.float32):
    return Var(np.asarray(value, dtype=dtype))


def leaf(value, param=None):
    """Trainable leaf; ``param`` is the ParamSet name gradients are routed to."""
    return Var(value, requires_grad=True, param=param)


def _lift(x, like):
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=like.value.dtype))


def _node(value, parents, backward_fn):
    rg = any(p.requires_grad for p in parents)
    return Var(value, parents if rg else (), backward_fn if rg else None, rg)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss):
    """Accumulate d(loss)/d(node) into ``.grad`` of every node reachable from ``loss``."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for p, g in zip(node.parents, grads):
            if g is None or not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = g
            else:
                p.grad = p.grad + g
        if node.parents:
            node.grad = None
    return order


# ---- elementwise -----------------------------------------------------------

def add(a, b):
    def bw(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)
    return _node(a.value + b.value, (a, b), bw)


def sub(a, b):
    def bw(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)
    return _node(a.value - b.value, (a, b), bw)


def mul(a, b):
    def bw(g):
        return _unbroadcast(g * b.value, a.value.shape), _unbroadcast(g * a.value, b.value.shape)
    return _node(a.value * b.value, (a, b), bw)


def scale(a, c):
    c = a.value.dtype.type(c)
    return _node(a.value * c, (a,), lambda g: (g * c,))


def square(a):
    return _node(a.value * a.value, (a,), lambda g: (2 * g * a.value,))


def leaky_relu(a, slope=0.01):
    s = a.value.dtype.type(slope)
    mask = np.where(a.value > 0, a.value.dtype.type(1), s)
    return _node(a.value * mask, (a,), lambda g: (g * mask,))


def tanh(a):
    y = np.tanh(a.value)
    return _node(y, (a,), lambda g: (g * (1 - y * y),))


def sigmoid(a):
    x = a.value
    # split by sign so neither branch overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return _node(y, (a,), lambda g: (g * y * (1 - y),))


def log_clamped(a, eps=LOG_EPS):
    x = a.value
    inside = x > eps
    y = np.log(np.maximum(x, x.dtype.type(eps)))
    return _node(y, (a,), lambda g: (np.where(inside, g / np.maximum(x, x.dtype.type(eps)), 0).astype(x.dtype),))


def stop_gradient(a):
    return Var(a.value)


# ---- reductions / shape ----------------------------------------------------

def sum_all(a):
    def bw(g):
        return (np.broadcast_to(g, a.value.shape).astype(a.value.dtype),)
    return _node(np.asarray(a.value.sum(), dtype=a.value.dtype), (a,), bw)


def mean_all(a):
    n = a.value.size
    def bw(g):
        return (np.broadcast_to(g / n, a.value.shape).astype(a.value.dtype),)
    return _node(np.asarray(a.value.mean(), dtype=a.value.dtype), (a,), bw)


def sum_axis(a, axis):
    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), a.value.shape).astype(a.value.dtype),)
    return _node(a.value.sum(axis=axis), (a,), bw)


def reshape(a, shape):
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(xs, axis=-1):
    sizes = [x.value.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))
    return _node(np.concatenate([x.value for x in xs], axis=axis), tuple(xs), bw)


def rows(a, start, stop):
    """Slice ``a[start:stop]`` along the leading axis."""
    def bw(g):
        out = np.zeros_like(a.value)
        out[start:stop] = g
        return (out,)
    return _node(a.value[start:stop], (a,), bw)


def pick(a, index):
    """Select ``a[i, index[i]]`` for a 2-D ``a``; returns shape (N,)."""
    index = np.asarray(index)
    r = np.arange(a.value.shape[0])
    def bw(g):
        out = np.zeros_like(a.value)
        out[r, index] = g
        return (out,)
    return _node(a.value[r, index], (a,), bw)


def gather_rows(table, index):
    """Embedding lookup ``table[index]``; gradients scatter-add back into the table."""
    index = np.asarray(index)
    def bw(g):
        out = np.zeros_like(table.value)
        np.add.at(out, index, g)
        return (out,)
    return _node(table.value[index], (table,), bw)


def row_norm(a):
    """Euclidean norm of each row; the subgradient at a zero row is taken as 0."""
    n = np.sqrt((a.value * a.value).sum(axis=1))
    def bw(g):
        safe = np.where(n > 0, n, 1).astype(a.value.dtype)
        return (np.where(n[:, None] > 0, a.value * (g / safe)[:, None], 0).astype(a.value.dtype),)
    return _node(n, (a,), bw)


# ---- linear algebra --------------------------------------------------------

def matmul(a, b):
    def bw(g):
        return g @ b.value.T, a.value.T @ g
    return _node(a.value @ b.value, (a, b), bw)


def dense(x, w, b=None):
    y = x.value @ w.value
    if b is not None:
        y = y + b.value

    def bw(g):
        gx = g @ w.value.T if x.requires_grad else None
        gw = x.value.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b is not None and b.requires_grad else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    return _node(y, (x, w, b) if b is not None else (x, w), bw)


@numba.njit(cache=True)
def _col2im(dcols, out, stride):
    n, oh, ow, kh, kw, cin = dcols.shape
    for b in range(n):
        for y in range(oh):
            for x in range(ow):
                for i in range(kh):
                    for j in range(kw):
                        for c in range(cin):
                            out[b, y * stride + i, x * stride + j, c] += dcols[b, y, x, i, j, c]
    return out


def conv2d(x, w, b, stride=1, pad=0):
    """NHWC convolution; ``w`` has shape (kh, kw, cin, cout)."""
    xv = x.value
    if xv.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input, got shape {xv.shape}")
    kh, kw, cin, cout = w.value.shape
    if xv.shape[3] != cin:
        raise ShapeError(f"conv2d input has {xv.shape[3]} channels, kernel expects {cin}")
    if pad:
        xv = np.pad(xv, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    n, hp, wp, _ = xv.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xv, (kh, kw), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # (n, oh, ow, cin, kh, kw) -> (n*oh*ow, kh*kw*cin)
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * oh * ow, kh * kw * cin)
    wmat = w.value.reshape(kh * kw * cin, cout)
    y = (cols @ wmat + b.value).reshape(n, oh, ow, cout)

    def bw(g):
        g2 = g.reshape(n * oh * ow, cout)
        gw = (cols.T @ g2).reshape(w.value.shape) if w.requires_grad else None
        gb = g2.sum(axis=0) if b.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(n, oh, ow, kh, kw, cin)
            dxp = _col2im(dcols, np.zeros_like(xv), stride)
            gx = dxp[:, pad : hp - pad, pad : wp - pad, :] if pad else dxp
        return gx, gw, gb

    return _node(y, (x, w, b), bw)


# ---- probability -----------------------------------------------------------

def log_softmax(a):
    x = a.value
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)
    return _node(y, (a,), bw)


def softmax_var(a):
    x = a.value
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)
    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    return _node(y, (a,), bw)


def softmax(logits):
    """Numerically stable softmax over the last axis of a plain array."""
    x = np.asarray(logits)
    if x.size == 0:
        raise ShapeError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise NumericInputError("softmax input contains NaN or Inf")
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def cross_entropy(p, q, eps=LOG_EPS):
    """``-sum p * log q`` with ``q`` clamped at ``eps`` before the log."""
    p = np.asarray(p)
    q = np.asarray(q)
    if p.shape != q.shape:
        raise ShapeError(f"cross_entropy length mismatch: {p.shape} vs {q.shape}")
    return float(-(p * np.log(np.maximum(q, eps))).sum())
