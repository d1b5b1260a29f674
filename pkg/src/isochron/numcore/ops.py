"""Differentiable operations over :class:`Tensor`.

Every op computes its forward value with numpy and, when a graph is active and
an input requires grad, records a closure returning the input gradients.
Reductions that feed normalisation (softmax, layer norm, cross entropy)
accumulate in float64 and cast back to the input precision.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor, active_graph


class DimensionError(ValueError):
    pass


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: Sequence[Tensor], value: np.ndarray, backward) -> Tensor:
    g = active_graph()
    track = g is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = value
    out.requires_grad = track
    out.grad = None
    out.name = ""
    if track:
        g.record(op, inputs, out, backward)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a vector matching ``a``'s last dim."""
    a, b = _wrap(a), _wrap(b)
    if a.shape == b.shape:
        bias = False
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        bias = True
    else:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} are not compatible")
    value = a.data + b.data

    def back(g):
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if bias else g
        return g, gb

    return _emit("add", (a, b), value, back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _emit("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c_ = a.data.dtype.type(c)
    return _emit("scale", (a,), a.data * c_, lambda g: (g * c_,))


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-differentiable constant broadcastable to ``a`` (attention masks)."""
    value = a.data + np.asarray(c, dtype=a.data.dtype)
    if value.shape != a.shape:
        raise DimensionError(f"add_const: constant {np.shape(c)} changes shape {a.shape}")
    return _emit("add_const", (a,), value, lambda g: (g,))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    c = np.asarray(c, dtype=a.data.dtype)
    value = a.data * c
    if value.shape != a.shape:
        raise DimensionError(f"mul_const: constant {c.shape} changes shape {a.shape}")
    return _emit("mul_const", (a,), value, lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` is either a matrix shared by every leading index of ``a`` (weights)
    or has exactly the same leading axes as ``a``.
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: need at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: leading dimensions differ for shapes {a.shape} and {b.shape}")
    value = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if shared:
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _emit("matmul", (a, b), value, back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _emit("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _emit("transpose", (a,), np.transpose(a.data, axes),
                 lambda g: (np.transpose(g, inv),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0).astype(a.data.dtype),
                 lambda g: (g * mask,))


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit generator")
    keep = (rng.random(a.shape, dtype=np.float32) >= p).astype(a.data.dtype) / a.data.dtype.type(1.0 - p)
    return _emit("dropout", (a,), a.data * keep, lambda g: (g * keep,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _wrap(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted.astype(np.float64))
    y64 = e / e.sum(axis=axis, keepdims=True)
    y = y64.astype(x.data.dtype)

    def back(g):
        dot = (g.astype(np.float64) * y64).sum(axis=axis, keepdims=True)
        return ((y64 * (g - dot)).astype(x.data.dtype),)

    return _emit("softmax", (x,), y, back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} must match last dim of {x.shape}")
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    xc = x64 - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    dt = x.data.dtype
    value = (xhat * gain.data + bias.data).astype(dt)

    def back(g):
        g64 = g.astype(np.float64)
        flat = g64.reshape(-1, d)
        ggain = (flat * xhat.reshape(-1, d)).sum(axis=0).astype(dt)
        gbias = flat.sum(axis=0).astype(dt)
        gx_hat = g64 * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx.astype(dt), ggain, gbias

    return _emit("layer_norm", (x, gain, bias), value, back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradients scatter-add back into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding: ids must lie in [0, {n}), got range [{ids.min()}, {ids.max()}]")

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _emit("embedding", (table,), table.data[ids], back)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    total = np.asarray(x.data.sum(dtype=np.float64), dtype=x.data.dtype)
    return _emit("sum", (x,), total, lambda g: (np.broadcast_to(g, x.shape).astype(x.data.dtype),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    avg = np.asarray(x.data.sum(dtype=np.float64) / n, dtype=x.data.dtype)
    return _emit("mean", (x,), avg,
                 lambda g: (np.broadcast_to(g / n, x.shape).astype(x.data.dtype),))


def log_softmax_np(logits: np.ndarray, banned: Sequence[int] = ()) -> np.ndarray:
    """float64 log-softmax over the last axis with ``banned`` columns at -inf."""
    z = logits.astype(np.float64)
    if len(banned):
        z = z.copy()
        z[..., list(banned)] = -np.inf
    m = z.max(axis=-1, keepdims=True)
    return z - (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))


def cross_entropy(logits: Tensor, targets: np.ndarray, pad_id: int,
                  banned: Sequence[int] = ()) -> Tensor:
    """Mean token negative log-likelihood over positions whose target is not ``pad_id``.

    ``banned`` vocabulary entries are excluded from the normalisation, exactly
    as if their logits were -inf.
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    keep = targets != pad_id
    bad = keep & ((targets < 0) | (targets >= vocab))
    if bad.any():
        raise IndexError(f"cross_entropy: target id {int(targets[bad][0])} outside [0, {vocab})")
    if banned and np.isin(targets[keep], list(banned)).any():
        raise IndexError("cross_entropy: a target id is in the banned set")
    n = int(keep.sum())
    dt = logits.data.dtype
    if n == 0:
        return _emit("cross_entropy", (logits,), np.asarray(0.0, dtype=dt),
                     lambda g: (np.zeros_like(logits.data),))
    logp = log_softmax_np(logits.data, banned)
    safe_t = np.where(keep, targets, 0)
    picked = np.take_along_axis(logp, safe_t[..., None], axis=-1)[..., 0]
    loss = -np.where(keep, picked, 0.0).sum() / n

    def back(g):
        p = np.exp(logp)
        np.put_along_axis(p, safe_t[..., None],
                          np.take_along_axis(p, safe_t[..., None], axis=-1) - 1.0, axis=-1)
        p *= (keep[..., None] * (float(g) / n))
        return (p.astype(dt),)

    return _emit("cross_entropy", (logits,), np.asarray(loss, dtype=dt), back)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None,
              dropout_p: float = 0.0, rng: np.random.Generator | None = None,
              train: bool = False) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the last two axes.

    ``mask`` is additive (0 or a large negative number) and broadcastable to the
    score tensor. Returns the attended values and the attention weights
    (pre-dropout).
    """
    dk = q.shape[-1]
    scores = scale(matmul(q, transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(dk))
    if mask is not None:
        scores = add_const(scores, np.broadcast_to(mask, scores.shape))
    weights = softmax(scores, axis=-1)
    dropped = dropout(weights, dropout_p, rng, train)
    return matmul(dropped, v), weights


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
