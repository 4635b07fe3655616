"""Dense float64 arrays with reverse-mode differentiation on a recorded trace.

Every forward op builds a node graph; calling ``backward()`` on a scalar walks
the graph in reverse topological order and accumulates gradients into leaf
tensors. The trace lives only on the Tensor objects of one forward pass and is
dropped as soon as they go out of scope.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "tensor",
    "zeros",
    "affine",
    "matmul",
    "concat",
    "softmax",
    "layer_norm",
    "tanh",
    "gelu",
    "relu",
    "masked_mse",
    "conv1d_time",
    "attention_block",
    "init_uniform",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_grad_enabled = True


class no_grad:
    """Context manager that disables trace recording (fast inference path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(values, shape=None):
    a = np.asarray(values, dtype=np.float64)
    if shape is not None:
        a = a.reshape(shape)
    return a


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    def detach(self):
        return Tensor(self.data)

    # -- backward -----------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {self.shape}")
        # iterative post-order DFS: every node appears once, after its inputs
        topo = []
        visited = {id(self)}
        stack = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            advanced = False
            for p in parents:
                if id(p) not in visited:
                    visited.add(id(p))
                    stack.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                topo.append(node)
                stack.pop()
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in node._vjp(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        out_data = self.data + other.data
        if not (_grad_enabled and (self.requires_grad or other.requires_grad)):
            return Tensor(out_data)

        def vjp(g):
            return ((self, _unbroadcast(g, self.data.shape)),
                    (other, _unbroadcast(g, other.data.shape)))

        return Tensor(out_data, True, (self, other), vjp)

    __radd__ = __add__

    def __neg__(self):
        out_data = -self.data
        if not (_grad_enabled and self.requires_grad):
            return Tensor(out_data)
        return Tensor(out_data, True, (self,), lambda g: ((self, -g),))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        out_data = self.data * other.data
        if not (_grad_enabled and (self.requires_grad or other.requires_grad)):
            return Tensor(out_data)

        def vjp(g):
            return ((self, _unbroadcast(g * other.data, self.data.shape)),
                    (other, _unbroadcast(g * self.data, other.data.shape)))

        return Tensor(out_data, True, (self, other), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        out_data = self.data / other.data
        if not (_grad_enabled and (self.requires_grad or other.requires_grad)):
            return Tensor(out_data)

        def vjp(g):
            return ((self, _unbroadcast(g / other.data, self.data.shape)),
                    (other, _unbroadcast(-g * self.data / other.data ** 2,
                                         other.data.shape)))

        return Tensor(out_data, True, (self, other), vjp)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        out_data = self.data[idx]
        if not (_grad_enabled and self.requires_grad):
            return Tensor(out_data)

        def vjp(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return ((self, full),)

        return Tensor(out_data, True, (self,), vjp)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        if not (_grad_enabled and self.requires_grad):
            return Tensor(out_data)
        orig = self.data.shape
        return Tensor(out_data, True, (self,),
                      lambda g: ((self, g.reshape(orig)),))

    def transpose(self, *axes):
        out_data = np.transpose(self.data, axes)
        if not (_grad_enabled and self.requires_grad):
            return Tensor(out_data)
        inv = np.argsort(axes)
        return Tensor(out_data, True, (self,),
                      lambda g: ((self, np.transpose(g, inv)),))

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        if not (_grad_enabled and self.requires_grad):
            return Tensor(out_data)
        shape = self.data.shape

        def vjp(g):
            if axis is None:
                return ((self, np.broadcast_to(g, shape).copy()),)
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            return ((self, np.broadcast_to(gg, shape).copy()),)

        return Tensor(out_data, True, (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def tensor(values, requires_grad=False):
    return Tensor(values, requires_grad=requires_grad)


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


# -- matrix / token ops -----------------------------------------------------


def matmul(a, b):
    a = Tensor._lift(a)
    b = Tensor._lift(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.data.shape} vs {b.data.shape}")
    out_data = np.matmul(a.data, b.data)
    if not (_grad_enabled and (a.requires_grad or b.requires_grad)):
        return Tensor(out_data)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ((a, _unbroadcast(ga, a.data.shape)),
                (b, _unbroadcast(gb, b.data.shape)))

    return Tensor(out_data, True, (a, b), vjp)


def affine(x, W, b):
    """y = x W + b with shape checking; the workhorse linear projection."""
    x = Tensor._lift(x)
    W = Tensor._lift(W)
    b = Tensor._lift(b)
    if x.data.shape[-1] != W.data.shape[0]:
        raise ShapeError(
            f"affine: input {x.data.shape} incompatible with weight "
            f"{W.data.shape}")
    if W.data.shape[-1] != b.data.shape[-1]:
        raise ShapeError(
            f"affine: weight {W.data.shape} incompatible with bias "
            f"{b.data.shape}")
    return matmul(x, W) + b


def concat(tensors, axis=0):
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    if not (_grad_enabled and any(t.requires_grad for t in tensors)):
        return Tensor(out_data)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, parts))

    return Tensor(out_data, True, tuple(tensors), vjp)


def softmax(x):
    """Numerically stable softmax over the last axis."""
    x = Tensor._lift(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(out_data)

    def vjp(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return ((x, out_data * (g - dot)),)

    return Tensor(out_data, True, (x,), vjp)


def layer_norm(x, eps=1e-6):
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    x = Tensor._lift(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out_data = xc * inv
    if not (_grad_enabled and x.requires_grad):
        return Tensor(out_data)
    n = x.data.shape[-1]

    def vjp(g):
        gc = g - g.mean(axis=-1, keepdims=True)
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        gx = inv * (gc - out_data * dot / n)
        return ((x, gx),)

    return Tensor(out_data, True, (x,), vjp)


def tanh(x):
    x = Tensor._lift(x)
    out_data = np.tanh(x.data)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(out_data)
    return Tensor(out_data, True, (x,),
                  lambda g: ((x, g * (1.0 - out_data ** 2)),))


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact (erf-based) GELU."""
    x = Tensor._lift(x)
    from scipy.special import erf
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * cdf
    if not (_grad_enabled and x.requires_grad):
        return Tensor(out_data)

    def vjp(g):
        pdf = np.exp(-0.5 * x.data ** 2) * _INV_SQRT2PI
        return ((x, g * (cdf + x.data * pdf)),)

    return Tensor(out_data, True, (x,), vjp)


def relu(x):
    x = Tensor._lift(x)
    out_data = np.maximum(x.data, 0.0)
    if not (_grad_enabled and x.requires_grad):
        return Tensor(out_data)
    mask = (x.data > 0).astype(np.float64)
    return Tensor(out_data, True, (x,), lambda g: ((x, g * mask),))


def masked_mse(pred, target, mask):
    """Mean over mask-true cells of the squared L2 norm along the last axis.

    ``mask`` selects cells (all axes except the last); an all-false mask
    yields 0.
    """
    pred = Tensor._lift(pred)
    target = Tensor._lift(target)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != pred.data.shape[:-1]:
        raise ShapeError(
            f"masked_mse: mask {m.shape} does not match cells "
            f"{pred.data.shape[:-1]}")
    count = m.sum()
    if count == 0.0:
        return Tensor(0.0)
    diff = pred - target
    per_cell = (diff * diff).sum(axis=-1)
    return (per_cell * Tensor(m)).sum() * (1.0 / count)


def conv1d_time(x, kernel, bias):
    """Temporal 1-D convolution with zero padding (same length output).

    x: (..., T, C_in); kernel: (k, C_in, C_out) with odd k; bias: (C_out,).
    """
    x = Tensor._lift(x)
    kernel = Tensor._lift(kernel)
    bias = Tensor._lift(bias)
    k = kernel.data.shape[0]
    if k % 2 != 1:
        raise ShapeError(f"conv1d_time kernel width must be odd, got {k}")
    if x.data.shape[-1] != kernel.data.shape[1]:
        raise ShapeError(
            f"conv1d_time: input {x.data.shape} incompatible with kernel "
            f"{kernel.data.shape}")
    half = k // 2
    T = x.data.shape[-2]
    pad = [(0, 0)] * (x.data.ndim - 2) + [(half, half), (0, 0)]
    xp = np.pad(x.data, pad)
    out_data = np.matmul(xp[..., 0:T, :], kernel.data[0])
    for j in range(1, k):
        out_data += np.matmul(xp[..., j:j + T, :], kernel.data[j])
    out_data += bias.data
    if not (_grad_enabled and (x.requires_grad or kernel.requires_grad
                               or bias.requires_grad)):
        return Tensor(out_data)

    def vjp(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kernel.data)
        for j in range(k):
            gxp[..., j:j + T, :] += np.matmul(g, kernel.data[j].T)
            seg = np.matmul(np.swapaxes(xp[..., j:j + T, :], -1, -2), g)
            gk[j] = seg.reshape((-1,) + gk[j].shape).sum(axis=0) \
                if seg.ndim > 2 else seg
        gx = gxp[..., half:half + T, :] if half else gxp
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return ((x, gx), (kernel, gk), (bias, gb))

    return Tensor(out_data, True, (x, kernel, bias), vjp)


def attention_block(q, k, v, heads):
    """Multi-head scaled dot-product attention over token sequences.

    q, k, v: (..., T, d) with d divisible by ``heads``; full bidirectional
    attention, softmax rows sum to 1. Returns (..., T, d).
    """
    q = Tensor._lift(q)
    k = Tensor._lift(k)
    v = Tensor._lift(v)
    d = q.data.shape[-1]
    if d % heads != 0:
        raise ShapeError(
            f"attention_block: feature dim {d} not divisible by {heads} heads")
    if q.data.shape[-1] != k.data.shape[-1] or k.data.shape != v.data.shape:
        raise ShapeError(
            f"attention_block: shapes q={q.data.shape} k={k.data.shape} "
            f"v={v.data.shape}")
    hd = d // heads
    Tq = q.data.shape[-2]
    lead = q.data.shape[:-2]

    def split(t, T):
        return t.reshape(lead + (T, heads, hd)).transpose(
            *range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2)

    Tk = k.data.shape[-2]
    qh = split(q, Tq)                      # (..., heads, Tq, hd)
    kh = split(k, Tk)
    vh = split(v, Tk)
    scores = matmul(qh, kh.transpose(
        *range(len(lead)), len(lead), len(lead) + 2, len(lead) + 1))
    scores = scores * (1.0 / math.sqrt(hd))
    weights = softmax(scores)
    out = matmul(weights, vh)              # (..., heads, Tq, hd)
    out = out.transpose(*range(len(lead)), len(lead) + 1, len(lead),
                        len(lead) + 2)
    return out.reshape(lead + (Tq, d))


def attention_weights(q, k, heads):
    """Post-softmax attention weights, (..., heads, Tq, Tk); readout only."""
    q = np.asarray(q.data if isinstance(q, Tensor) else q)
    k = np.asarray(k.data if isinstance(k, Tensor) else k)
    d = q.shape[-1]
    hd = d // heads
    lead = q.shape[:-2]
    qh = q.reshape(lead + (q.shape[-2], heads, hd))
    kh = k.reshape(lead + (k.shape[-2], heads, hd))
    qh = np.moveaxis(qh, -2, -3)
    kh = np.moveaxis(kh, -2, -3)
    scores = np.matmul(qh, np.swapaxes(kh, -1, -2)) / math.sqrt(hd)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return e / e.sum(axis=-1, keepdims=True)


def init_uniform(rng, shape, fan_in=None):
    """Default parameter init: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    if fan_in is None:
        fan_in = shape[0] if len(shape) > 1 else shape[-1]
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)
