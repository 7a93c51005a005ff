"""Minimal reverse-mode autodiff over numpy float64 arrays.

Every op builds a node holding its output array and a closure mapping the
upstream gradient to one gradient per parent.  ``Tensor.backward`` walks the
graph in reverse topological order and accumulates gradients only on leaves
that require them, so intermediate buffers are released as soon as possible.

Ops are coarse on purpose (fused linear, fused multi-head attention, fused
layer norm, fused cross entropy): at desk scale the cost is dominated by
per-op Python overhead, not FLOPs.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
NEG_INF = -1e9

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    @property
    def T(self):
        return transpose(self)

    # -- backward ----------------------------------------------------------
    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape, dtype=np.float32) >= p) * (1.0 / (1.0 - p))
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (x,), lambda g: (np.transpose(g, inv),))


def tsum(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    shape = x.shape
    return _make(np.asarray(x.data.sum() / n), (x,), lambda g: (np.full(shape, float(g) / n),))


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(x * weights)`` with constant weights."""
    w = np.asarray(weights, dtype=DTYPE)
    if w.shape != x.shape:
        raise ShapeError(f"weights shape {w.shape} does not match input shape {x.shape}")
    return _make(np.asarray((x.data * w).sum()), (x,), lambda g: (g * w,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-D operands or a batched left operand with a 2-D right one."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim not in (2, a.ndim) or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    flat = b.ndim == 2 and a.ndim > 2
    if flat:
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(*a.shape[:-1], b.shape[1])
    else:
        out = np.matmul(a.data, b.data)

    def backward(g):
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _make(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for x of shape (..., d_in) and w of shape (d_in, d_out)."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear shape mismatch: input {x.shape} vs weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(*lead, w.shape[1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        dx = (g2 @ w.data.T).reshape(x.shape)
        dw = x2.T @ g2
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, backward)


def embedding(weight: Tensor, ids: np.ndarray, scale: float = 1.0) -> Tensor:
    """Row gather ``weight[ids] * scale``; backward scatters with np.add.at (fixed order)."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range [0, {vocab})")
    out = weight.data[ids] * scale

    def backward(g):
        dw = np.zeros_like(weight.data)
        np.add.at(dw, ids.reshape(-1), g.reshape(-1, weight.shape[1]) * scale)
        return (dw,)

    return _make(out, (weight,), backward)


# ---------------------------------------------------------------------------
# normalisation and probabilities
# ---------------------------------------------------------------------------

def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")
    p = _softmax(x.data, axis)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm gain/bias {gain.shape}/{bias.shape} incongruent with input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    denom = var + eps
    # zero-variance rows with eps=0 standardise to 0 rather than NaN
    inv = np.where(denom > 0, 1.0 / np.sqrt(np.where(denom > 0, denom, 1.0)), 0.0)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    d = x.shape[-1]

    def backward(g):
        gx = g * gain.data
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, d)
        return dx, (flat_g * xhat.reshape(-1, d)).sum(axis=0), flat_g.sum(axis=0)

    return _make(out, (x, gain, bias), backward)


def cross_entropy(logits: Tensor, targets, mask=None, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of integer targets under softmax(logits).

    ``logits`` has shape (..., V) and ``targets`` the leading shape.  Positions
    where ``mask`` is False contribute nothing.  ``reduction`` is ``"mean"``
    (over unmasked positions), ``"sum"`` or ``"none"`` (per-position losses,
    zero where masked).
    """
    targets = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"targets shape {targets.shape} incongruent with logits {logits.shape}")
    mask = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    live = targets[mask]
    if live.size and (live.min() < 0 or live.max() >= V):
        raise IndexError(f"target id out of range [0, {V})")
    safe = np.where(mask, targets, 0)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    nll = -np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0] * mask

    if reduction == "none":
        out = nll
    elif reduction == "sum":
        out = np.asarray(nll.sum())
    elif reduction == "mean":
        out = np.asarray(nll.sum() / max(int(mask.sum()), 1))
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    count = max(int(mask.sum()), 1)

    def backward(g):
        if reduction == "none":
            w = g * mask
        elif reduction == "sum":
            w = float(g) * mask
        else:
            w = float(g) / count * mask
        p = np.exp(logp)
        grad = p * w[..., None]
        onehot_rows = np.zeros_like(p)
        np.put_along_axis(onehot_rows, safe[..., None], w[..., None], axis=-1)
        return (grad - onehot_rows,)

    return _make(out, (logits,), backward)


# ---------------------------------------------------------------------------
# fused multi-head attention
# ---------------------------------------------------------------------------

def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    B, T, d = x.shape
    return x.reshape(B, T, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, h, T, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, h * dh)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int, mask: np.ndarray | None = None,
              capture: list | None = None) -> Tensor:
    """Scaled dot-product attention over ``heads`` heads.

    q: (B, Tq, d); k, v: (B, Tk, d).  ``mask`` is boolean and broadcastable to
    (B, heads, Tq, Tk); False entries are excluded.  When ``capture`` is a list
    the attention weights (B, heads, Tq, Tk) are appended to it.
    """
    if q.ndim != 3 or k.shape != v.shape or q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2]:
        raise ShapeError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    d = q.shape[-1]
    if d % heads:
        raise ShapeError(f"model width {d} not divisible by {heads} heads")
    scale = 1.0 / np.sqrt(d // heads)
    qh, kh, vh = _split_heads(q.data, heads), _split_heads(k.data, heads), _split_heads(v.data, heads)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    if mask is not None:
        scores = np.where(mask, scores, NEG_INF)
    p = _softmax(scores, -1)
    if capture is not None:
        capture.append(p)
    out = _merge_heads(p @ vh)

    def backward(g):
        go = _split_heads(g, heads)
        dp = go @ vh.transpose(0, 1, 3, 2)
        dv = p.transpose(0, 1, 3, 2) @ go
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ kh
        dk = ds.transpose(0, 1, 3, 2) @ qh
        return _merge_heads(dq), _merge_heads(dk), _merge_heads(dv)

    return _make(out, (q, k, v), backward)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def numerical_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` w.r.t. ``param.data``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(fn().data)
            flat[i] = old - h
            down = float(fn().data)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0


def gradcheck(fn: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between backprop and central differences over ``params``."""
    params = list(params)
    for p in params:
        p.grad = None
    fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        worst = max(worst, relative_error(analytic, numerical_grad(fn, p, h)))
    return worst
