"""Dense float64 tensors with a single-use reverse-mode tape.

Usage::

    w = Tensor(np.zeros((4, 2)), requires_grad=True)
    with Tape() as tape:
        loss = l1_loss(sigmoid(matmul(x, w)), target)
    grads = tape.backward(loss)      # {w: dL/dw}

Primitives record onto the innermost active tape whenever any input requires
a gradient. Outside a tape they run as plain numpy functions.

Image tensors are channels-last: (batch, height, width, channels).
Point tensors are (batch, points, channels).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    NoTapeError,
    ShapeError,
    TapeConsumedError,
    UnsupportedPrimitive,
)

BCE_EPS = 1e-7


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_tape", "_node")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


@dataclass
class _Node:
    kind: str
    inputs: tuple  # node ids, or None for constants
    vjp: Callable | None
    needs: tuple


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications; creation order is topological."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: dict[int, int] = {}
        self._leaf_tensors: list[Tensor] = []
        self.consumed = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def _node_for(self, t: Tensor):
        if t._tape is self:
            return t._node
        if not t.requires_grad:
            return None
        key = id(t)
        if key not in self._leaves:
            self._leaves[key] = len(self.nodes)
            self._leaf_tensors.append(t)
            self.nodes.append(_Node("leaf", (), None, ()))
        return self._leaves[key]

    def record(self, kind, inputs, out: Tensor, vjp):
        if self.consumed:
            raise TapeConsumedError("tape already consumed by backward()")
        ids = tuple(self._node_for(t) for t in inputs)
        needs = tuple(i is not None for i in ids)
        out._tape = self
        out._node = len(self.nodes)
        out.requires_grad = True
        self.nodes.append(_Node(kind, ids, vjp, needs))

    def backward(self, loss: Tensor, wrt: Sequence[Tensor] | None = None):
        """Reverse sweep from a scalar loss.

        Returns a dict mapping leaf tensors to gradient arrays. When ``wrt`` is
        given, exactly those tensors are returned, with zero arrays for any that
        did not take part in the computation.
        """
        if loss._tape is None:
            raise NoTapeError("loss is not attached to any tape")
        if loss._tape is not self:
            raise ContractError("loss was recorded on a different tape")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise TapeConsumedError("tape already consumed by backward()")
        self.consumed = True

        grads: list = [None] * len(self.nodes)
        grads[loss._node] = np.ones_like(loss.data)
        for idx in range(loss._node, -1, -1):
            node = self.nodes[idx]
            g = grads[idx]
            if g is None or node.vjp is None:
                continue
            in_grads = node.vjp(g, node.needs)
            for src, gi in zip(node.inputs, in_grads):
                if src is None or gi is None:
                    continue
                if grads[src] is None:
                    grads[src] = gi
                else:
                    grads[src] = grads[src] + gi
            if node.kind != "leaf":
                grads[idx] = None

        out = {}
        for t in self._leaf_tensors:
            g = grads[self._leaves[id(t)]]
            out[t] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
        self.nodes = []  # saved activations die with the tape
        if wrt is None:
            return out
        return {t: out[t] if t in out else np.zeros_like(t.data) for t in wrt}


def backward(loss: Tensor, wrt=None):
    if loss._tape is None:
        raise NoTapeError("loss is not attached to any tape")
    return loss._tape.backward(loss, wrt)


def active_tape():
    return _ACTIVE[-1] if _ACTIVE else None


# ---------------------------------------------------------------------------
# primitive catalog

_PRIMITIVES: dict[str, Callable] = {}


def _register(name):
    def deco(fn):
        _PRIMITIVES[name] = fn
        return fn

    return deco


def primitive_names():
    return sorted(_PRIMITIVES)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_primitive(kind: str, inputs, **attrs) -> Tensor:
    try:
        fwd = _PRIMITIVES[kind]
    except KeyError:
        raise UnsupportedPrimitive(kind) from None
    inputs = [_as_tensor(x) for x in inputs]
    out_data, vjp = fwd(*[t.data for t in inputs], **attrs)
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, inputs, out, vjp)
    return out


@_register("matmul")
def _matmul(x, w):
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise ShapeError("matmul", x.shape, w.shape)
    out = x @ w

    def vjp(g, needs):
        dx = g @ w.T if needs[0] else None
        dw = None
        if needs[1]:
            x2 = x.reshape(-1, w.shape[0])
            dw = x2.T @ g.reshape(-1, w.shape[1])
        return dx, dw

    return out, vjp


@_register("bias_add")
def _bias_add(x, b):
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError("bias_add", x.shape, b.shape)

    def vjp(g, needs):
        return g, (g.reshape(-1, b.shape[0]).sum(axis=0) if needs[1] else None)

    return x + b, vjp


@_register("add")
def _add(x, y):
    if x.shape != y.shape:
        raise ShapeError("add", x.shape, y.shape)
    return x + y, lambda g, needs: (g, g)


@_register("relu")
def _relu(x):
    mask = x > 0
    return np.where(mask, x, 0.0), lambda g, needs: (g * mask,)


def _sigmoid_array(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@_register("sigmoid")
def _sigmoid(x):
    y = _sigmoid_array(x)
    return y, lambda g, needs: (g * y * (1.0 - y),)


@_register("concat")
def _concat(*xs, axis=-1):
    if not xs:
        raise ShapeError("concat", detail="no inputs")
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or x.shape[:ax] + x.shape[ax + 1:] != xs[0].shape[:ax] + xs[0].shape[ax + 1:]:
            raise ShapeError("concat", *(x.shape for x in xs))
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def vjp(g, needs):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) if needs[i] else None
            for i in range(len(xs))
        )

    return np.concatenate(xs, axis=ax), vjp


@_register("tile_points")
def _tile_points(x, n):
    """(B, C) -> (B, n, C): repeat a per-sample vector for every point."""
    if x.ndim != 2 or n < 1:
        raise ShapeError("tile_points", x.shape, detail=f"n={n}")
    out = np.repeat(x[:, None, :], n, axis=1)
    return out, lambda g, needs: (g.sum(axis=1),)


@_register("mul_channel")
def _mul_channel(x, s):
    """Elementwise product; ``s`` may have a trailing extent of 1 broadcast over channels."""
    if x.shape != s.shape and not (s.shape[:-1] == x.shape[:-1] and s.shape[-1] == 1):
        raise ShapeError("mul_channel", x.shape, s.shape)
    broadcast = x.shape != s.shape

    def vjp(g, needs):
        dx = g * s if needs[0] else None
        ds = None
        if needs[1]:
            ds = g * x
            if broadcast:
                ds = ds.sum(axis=-1, keepdims=True)
        return dx, ds

    return x * s, vjp


@_register("max_points")
def _max_points(x):
    """Channel-wise max over the point axis: (..., N, C) -> (..., C)."""
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError("max_points", x.shape)
    idx = np.argmax(x, axis=-2)[..., None, :]
    out = np.take_along_axis(x, idx, axis=-2)[..., 0, :]

    def vjp(g, needs):
        dx = np.zeros_like(x)
        np.put_along_axis(dx, idx, g[..., None, :], axis=-2)
        return (dx,)

    return out, vjp


@_register("mean_points")
def _mean_points(x):
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeError("mean_points", x.shape)
    n = x.shape[-2]

    def vjp(g, needs):
        return (np.broadcast_to(g[..., None, :] / n, x.shape).copy(),)

    return x.mean(axis=-2), vjp


_OFFSETS3 = [(i, j) for i in range(3) for j in range(3)]


def _pad1(x):
    # one pixel of zeros around H and W; cheaper than np.pad
    B, H, W, C = x.shape
    out = np.zeros((B, H + 2, W + 2, C))
    out[:, 1:-1, 1:-1, :] = x
    return out


@_register("conv2d")
def _conv2d(x, w, b):
    """Stride-1 convolution on (B, H, W, Cin) with kernel (k, k, Cin, Cout), k in {1, 3}.

    3x3 kernels use zero padding 1 so spatial size is preserved.
    """
    if x.ndim != 4 or w.ndim != 4 or w.shape[0] != w.shape[1] or w.shape[0] not in (1, 3):
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel must be 1x1 or 3x3")
    if w.shape[2] != x.shape[3] or b.shape != (w.shape[3],):
        raise ShapeError("conv2d", x.shape, w.shape, b.shape)
    B, H, W, cin = x.shape
    k, cout = w.shape[0], w.shape[3]
    if k == 1:
        out = x @ w[0, 0] + b
    else:
        # sum of nine shifted matmuls; cheaper than materializing im2col columns
        xp = _pad1(x)
        out = np.broadcast_to(b, (B, H, W, cout)).copy()
        for i, j in _OFFSETS3:
            out += xp[:, i:i + H, j:j + W, :] @ w[i, j]

    def vjp(g, needs):
        db = g.sum(axis=(0, 1, 2)) if needs[2] else None
        if k == 1:
            dw = (x.reshape(-1, cin).T @ g.reshape(-1, cout))[None, None] if needs[1] else None
            dx = g @ w[0, 0].T if needs[0] else None
            return dx, dw, db
        g2 = g.reshape(-1, cout)
        dw = np.empty_like(w) if needs[1] else None
        dx = np.zeros(x.shape) if needs[0] else None
        gp = _pad1(g) if needs[0] else None
        for i, j in _OFFSETS3:
            if needs[1]:
                dw[i, j] = np.ascontiguousarray(xp[:, i:i + H, j:j + W, :]).reshape(-1, cin).T @ g2
            if needs[0]:
                dx += gp[:, 2 - i:2 - i + H, 2 - j:2 - j + W, :] @ w[i, j].T
        return dx, dw, db

    return out, vjp


def _up_axis(x, axis):
    # half-pixel bilinear 2x along one axis, edge-clamped
    y = np.moveaxis(x, axis, 0)
    prev = np.concatenate([y[:1], y[:-1]])
    nxt = np.concatenate([y[1:], y[-1:]])
    out = np.empty((2 * y.shape[0],) + y.shape[1:])
    out[0::2] = 0.75 * y + 0.25 * prev
    out[1::2] = 0.75 * y + 0.25 * nxt
    return np.moveaxis(out, 0, axis)


def _up_axis_adjoint(g, axis):
    h = np.moveaxis(g, axis, 0)
    ge, go = h[0::2], h[1::2]
    dx = 0.75 * (ge + go)
    dx[:-1] += 0.25 * ge[1:]
    dx[0] += 0.25 * ge[0]
    dx[1:] += 0.25 * go[:-1]
    dx[-1] += 0.25 * go[-1]
    return np.moveaxis(dx, 0, axis)


@_register("upsample2x")
def _upsample2x(x):
    """Bilinear 2x upsampling of (B, H, W, C), half-pixel centres, edge clamp."""
    if x.ndim != 4:
        raise ShapeError("upsample2x", x.shape)
    out = _up_axis(_up_axis(x, 1), 2)
    return out, lambda g, needs: (_up_axis_adjoint(_up_axis_adjoint(g, 2), 1),)


@_register("reshape")
def _reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return out, lambda g, needs: (g.reshape(x.shape),)


@_register("sum")
def _sum(x):
    return np.asarray(x.sum()), lambda g, needs: (np.full(x.shape, g.item()),)


@_register("l1_loss")
def _l1_loss(pred, target):
    if pred.shape != target.shape:
        raise ShapeError("l1_loss", pred.shape, target.shape)
    diff = pred - target
    n = diff.size

    def vjp(g, needs):
        s = np.sign(diff) * (g.item() / n)
        return (s if needs[0] else None), (-s if needs[1] else None)

    return np.asarray(np.abs(diff).mean()), vjp


@_register("weighted_l1")
def _weighted_l1(pred, target, weights):
    """sum(weights * |pred - target|) with fixed nonnegative per-element weights."""
    if pred.shape != target.shape or np.shape(weights) != pred.shape:
        raise ShapeError("weighted_l1", pred.shape, target.shape, np.shape(weights))
    diff = pred - target

    def vjp(g, needs):
        s = np.sign(diff) * weights * g.item()
        return (s if needs[0] else None), (-s if needs[1] else None)

    return np.asarray((weights * np.abs(diff)).sum()), vjp


@_register("bce_loss")
def _bce_loss(pred, target, eps=BCE_EPS):
    """Mean binary cross-entropy; predictions clamped to [eps, 1 - eps]."""
    if pred.shape != target.shape:
        raise ShapeError("bce_loss", pred.shape, target.shape)
    p = np.clip(pred, eps, 1.0 - eps)
    n = p.size
    loss = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean()

    def vjp(g, needs):
        dp = None
        if needs[0]:
            inside = (pred > eps) & (pred < 1.0 - eps)
            dp = (g.item() / n) * ((1.0 - target) / (1.0 - p) - target / p) * inside
        dt = (g.item() / n) * (np.log1p(-p) - np.log(p)) if needs[1] else None
        return dp, dt

    return np.asarray(loss), vjp


@_register("weighted_sum")
def _weighted_sum(*scalars, weights):
    if len(weights) != len(scalars) or any(s.size != 1 for s in scalars):
        raise ShapeError("weighted_sum", *(s.shape for s in scalars), detail=f"{len(weights)} weights")
    total = 0.0
    for w, s in zip(weights, scalars):
        total += float(w) * s.item()

    def vjp(g, needs):
        return tuple(np.full(s.shape, float(w) * g.item()) for w, s in zip(weights, scalars))

    return np.asarray(total), vjp


@_register("softmax_cross_entropy")
def _softmax_ce(logits, labels):
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError("softmax_cross_entropy", logits.shape, labels.shape)
    lab = labels.astype(np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), lab].mean()

    def vjp(g, needs):
        d = np.exp(logp)
        d[np.arange(n), lab] -= 1.0
        return d * (g.item() / n), None

    return np.asarray(loss), vjp


# ---------------------------------------------------------------------------
# thin wrappers


def matmul(x, w):
    return apply_primitive("matmul", [x, w])


def bias_add(x, b):
    return apply_primitive("bias_add", [x, b])


def add(x, y):
    return apply_primitive("add", [x, y])


def relu(x):
    return apply_primitive("relu", [x])


def sigmoid(x):
    return apply_primitive("sigmoid", [x])


def concat(xs, axis=-1):
    return apply_primitive("concat", list(xs), axis=axis)


def tile_points(x, n):
    return apply_primitive("tile_points", [x], n=n)


def mul_channel(x, s):
    return apply_primitive("mul_channel", [x, s])


def max_points(x):
    return apply_primitive("max_points", [x])


def mean_points(x):
    return apply_primitive("mean_points", [x])


def conv2d(x, w, b):
    return apply_primitive("conv2d", [x, w, b])


def upsample2x(x):
    return apply_primitive("upsample2x", [x])


def reshape(x, shape):
    return apply_primitive("reshape", [x], shape=tuple(shape))


def tsum(x):
    return apply_primitive("sum", [x])


def l1_loss(pred, target):
    return apply_primitive("l1_loss", [pred, target])


def weighted_l1(pred, target, weights):
    return apply_primitive("weighted_l1", [pred, target], weights=np.asarray(weights, dtype=np.float64))


def bce_loss(pred, target, eps=BCE_EPS):
    return apply_primitive("bce_loss", [pred, target], eps=eps)


def weighted_sum(scalars, weights):
    return apply_primitive("weighted_sum", list(scalars), weights=tuple(weights))


def softmax_cross_entropy(logits, labels):
    return apply_primitive("softmax_cross_entropy", [logits, labels])


def linear(x, w, b):
    return bias_add(matmul(x, w), b)
