"""
Differentiable ops
The fixed op set the policy model needs. Each op computes its forward pass
with numpy and records a closure producing input gradients.
Leading batch dimensions broadcast the way numpy does.
"""

import math
from typing import Optional, Sequence

import numpy as np

from numkernel.tensor import Tensor, record
from policy.errors import DegenerateRowError, ShapeError

# Additive value for blocked attention cells; exp() underflows to exactly 0.
MASK_BLOCKED = -1e9

_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def backward_fn(g):
        ga = _unbroadcast(np.matmul(g, _swap(b.data)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(_swap(a.data), g), b.shape) if b.requires_grad else None
        return ga, gb

    return record("matmul", (a, b), out, backward_fn)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    out = Tensor(_swap(a.data))
    return record("transpose", (a,), out, lambda g: (_swap(g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")
    out = Tensor(data)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), out, backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}")
    out = Tensor(data)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), out, backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(factor))
    return record("scale", (a,), out, lambda g: (g * factor,))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def _visibility(mask) -> np.ndarray:
    """Accept an AttentionMask-like object, a bool matrix or an additive matrix."""
    visible = getattr(mask, "visible", mask)
    visible = np.asarray(visible)
    if visible.dtype != np.bool_:
        visible = visible > MASK_BLOCKED / 2
    return visible


def softmax_masked(logits: Tensor, mask) -> Tensor:
    """
    Row softmax with blocked cells removed.

    Args:
        logits: [..., rows, cols]
        mask: [rows, cols] visibility (AttentionMask, bool array, or additive 0 / MASK_BLOCKED)

    Returns:
        Probabilities; each row sums to 1 and blocked cells are exactly 0.
    """
    visible = _visibility(mask)
    if visible.shape != logits.shape[-2:]:
        raise ShapeError(f"softmax_masked: mask {visible.shape} does not match logits {logits.shape}")
    if not visible.any(axis=-1).all():
        bad = int(np.flatnonzero(~visible.any(axis=-1))[0])
        raise DegenerateRowError(f"softmax_masked: row {bad} has no visible entry")

    additive = np.where(visible, 0.0, MASK_BLOCKED).astype(logits.dtype)
    z = logits.data + additive
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(visible, np.exp(z), 0.0).astype(logits.dtype)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return record("softmax_masked", (logits,), out, backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply gain and bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match width {d}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward_fn(g):
        dxhat = g * gain.data
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dbias = g.reshape(-1, d).sum(axis=0)
        return dx, dgain, dbias

    return record("layer_norm", (x, gain, bias), out, backward_fn)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    u = _GELU_C * (x.data + 0.044715 * x.data ** 3)
    th = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + th))

    def backward_fn(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data ** 2)
        local = 0.5 * (1.0 + th) + 0.5 * x.data * (1.0 - th * th) * du
        return (g * local,)

    return record("gelu", (x,), out, backward_fn)


def embedding(table: Tensor, indices) -> Tensor:
    """Gather rows of `table`; output shape is indices.shape + (width,)."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding: index out of range for table {table.shape}")
    out = Tensor(table.data[idx])

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return record("embedding", (table,), out, backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        return tensors[0]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    out = Tensor(data)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", tensors, out, backward_fn)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Tensor(x.data[index])

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return record("slice", (x,), out, backward_fn)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.dtype))
    return record("sum", (x,), out, lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant target."""
    target = np.asarray(getattr(target, "data", target), dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    n = diff.size
    out = Tensor(np.asarray((diff * diff).sum() / n, dtype=pred.dtype))
    return record("mse", (pred,), out, lambda g: (g * 2.0 * diff / n,))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y
