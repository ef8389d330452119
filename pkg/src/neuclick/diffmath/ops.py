"""Differentiable primitives.

Each function takes Tensors (or array-likes, promoted to constants) and
returns a new Tensor wired into the graph.  Broadcasting follows numpy; the
backward pass sums gradients back down to each input's shape.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import expit

from ..errors import DimensionError
from .tensor import Tensor, as_tensor

_make = Tensor._make


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: inner axis mismatch, {a.shape} @ {b.shape} (axis -1 of lhs vs axis -2 of rhs)"
        )

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


# -- nonlinearities ------------------------------------------------------------


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """tanh-approximated GELU (smooth, so finite-difference checks are clean)."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), backward, "gelu")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clamp")


# -- reductions and shape ------------------------------------------------------


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def masked_mean(a, mask: np.ndarray, axis: int) -> Tensor:
    """Mean of ``a`` over ``axis`` counting only entries where ``mask`` holds.

    ``mask`` has the shape of ``a`` without trailing feature axes; groups
    with no valid entry give zeros.
    """
    a = as_tensor(a)
    m = np.asarray(mask, dtype=np.float64)
    while m.ndim < a.ndim:
        m = m[..., None]
    count = np.maximum(m.sum(axis=axis, keepdims=True), 1.0)
    return sum(mul(a, m / count), axis=axis)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out), (a,), backward, "index")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat along axis {axis}: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, ts, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack along axis {axis}: {exc}") from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, ts, backward, "stack")


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    a, b = as_tensor(a), as_tensor(b)
    c = np.asarray(cond, dtype=bool)
    out = np.where(c, a.data, b.data)

    def backward(g):
        return _unbroadcast(np.where(c, g, 0.0), a.shape), _unbroadcast(np.where(c, 0.0, g), b.shape)

    return _make(out, (a, b), backward, "where")


def embedding_lookup(table, ids: np.ndarray) -> Tensor:
    """Rows of ``table`` at integer ``ids`` (any shape); id -1 yields a zero row."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-d, got {table.shape}")
    if ids.size and (ids.max() >= table.shape[0] or ids.min() < -1):
        raise DimensionError(f"embedding ids out of range for table with {table.shape[0]} rows (axis 0)")
    valid = ids >= 0
    safe = np.where(valid, ids, 0)
    out = table.data[safe] * valid[..., None]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, safe[valid], g[valid])
        return (full,)

    return _make(out, (table,), backward, "embedding_lookup")


# -- normalisations ------------------------------------------------------------


def _expand_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    try:
        return np.broadcast_to(m, shape)
    except ValueError:
        raise DimensionError(f"mask of shape {m.shape} does not broadcast to {shape}") from None


def masked_softmax(a, mask=None, axis: int = -1) -> Tensor:
    """Softmax over ``axis`` restricted to ``mask``; fully masked rows are all zero."""
    a = as_tensor(a)
    m = np.ones(a.shape, bool) if mask is None else _expand_mask(mask, a.shape)
    x = np.where(m, a.data, -np.inf)
    mx = np.max(x, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(m, np.exp(np.where(m, a.data, 0.0) - mx), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    y = e / np.where(denom > 0, denom, 1.0)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), backward, "masked_softmax")


def masked_log_softmax(a, mask=None, axis: int = -1) -> Tensor:
    """Log-softmax over ``axis`` restricted to ``mask``; masked entries read 0."""
    a = as_tensor(a)
    m = np.ones(a.shape, bool) if mask is None else _expand_mask(mask, a.shape)
    x = np.where(m, a.data, -np.inf)
    mx = np.max(x, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(m, np.exp(np.where(m, a.data, 0.0) - mx), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    lse = mx + np.log(np.where(denom > 0, denom, 1.0))
    out = np.where(m, a.data - lse, 0.0)
    y = e / np.where(denom > 0, denom, 1.0)

    def backward(g):
        gm = np.where(m, g, 0.0)
        return (gm - y * gm.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), backward, "masked_log_softmax")


def layer_norm(a, gamma=None, beta=None, eps: float = 1e-5) -> Tensor:
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        return (inv * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)

    out = _make(xhat, (a,), backward, "layer_norm")
    if gamma is not None:
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out


# -- stochastic / estimator plumbing ------------------------------------------


def straight_through(hard: np.ndarray, soft) -> Tensor:
    """Forward value ``hard``; gradient passed to ``soft`` unchanged."""
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise DimensionError(f"straight_through: hard {hard.shape} vs soft {soft.shape}")
    return _make(hard.copy(), (soft,), lambda g: (g,), "straight_through")


def dropout(a, p: float, rng, train: bool = True) -> Tensor:
    a = as_tensor(a)
    if not train or p <= 0.0:
        return a
    keep = rng.uniform(size=a.shape) >= p
    scale = keep / (1.0 - p)
    return _make(a.data * scale, (a,), lambda g: (g * scale,), "dropout")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast_to")
