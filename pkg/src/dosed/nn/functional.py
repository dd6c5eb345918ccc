"""Differentiable operators. Every op returns a :class:`Tensor` whose backward
closure maps the output gradient to input gradients."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .. import kernels
from ..errors import ShapeError
from .tensor import Tensor, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _make(data, parents, backward_fn) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ----------------------------------------------------------------- algebra


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(a.data.sum(axis=axis), (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a: Tensor, index) -> Tensor:
    """``a[index]`` with any numpy index; repeated indices accumulate gradient."""

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), back)


# ------------------------------------------------------------- activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept units are scaled by ``1 / (1 - p)``; identity in eval mode."""
    if not training or p == 0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _make(out, (x,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


def _reduce(v: Tensor, reduction: str) -> Tensor:
    if reduction == "none":
        return v
    if reduction == "sum":
        return sum(v)
    if reduction == "mean":
        return mean(v)
    raise ValueError(f"unknown reduction {reduction!r}")


def cross_entropy(logits: Tensor, targets, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of integer ``targets`` under ``softmax(logits)`` over the last axis."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    lp = log_softmax(logits, axis=-1)
    flat = reshape(lp, (-1, logits.shape[-1]))
    picked = take(flat, (np.arange(targets.size), targets.ravel()))
    return _reduce(neg(reshape(picked, targets.shape)), reduction)


def smooth_l1(pred: Tensor, target, reduction: str = "mean") -> Tensor:
    """0.5 d^2 for |d| < 1, |d| - 0.5 otherwise, with d = pred - target."""
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    d = pred.data - target
    ad = np.abs(d)
    small = ad < 1.0
    val = np.where(small, 0.5 * d * d, ad - 0.5)
    grad = np.where(small, d, np.sign(d))
    return _reduce(_make(val, (pred,), lambda g: (g * grad,)), reduction)


# ------------------------------------------------------------- convolution


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [B, C_in, L] (or [C_in, L]) with ``w`` [C_out, C_in, K].

    Lowered to one matrix product over an im2col view of the zero-padded input.
    """
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d expects [B, C, L] input and [Co, Ci, K] kernels, got {x.shape}, {w.shape}")
    bsz, cin, length = xd.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise ShapeError(f"input has {cin} channels, kernels expect {cin_w}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"bias shape {b.shape} != ({cout},)")
    if k > length + 2 * padding:
        raise ShapeError(f"kernel {k} longer than padded input {length + 2 * padding}")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    lout = (length + 2 * padding - k) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else np.ascontiguousarray(xd)
    s0, s1, s2 = xp.strides
    cols = as_strided(xp, (bsz, lout, cin, k), (s0, stride * s2, s1, s2)).reshape(bsz * lout, cin * k)
    wm = w.data.reshape(cout, cin * k)
    out = (cols @ wm.T).reshape(bsz, lout, cout).transpose(0, 2, 1)
    if b is not None:
        out = out + b.data[None, :, None]
    out = np.ascontiguousarray(out)

    def back(g):
        g = g[None] if squeeze else g
        g2 = g.transpose(0, 2, 1).reshape(bsz * lout, cout)
        gw = (g2.T @ cols).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wm).reshape(bsz, lout, cin, k)
            gxp = np.zeros_like(xp)
            span = stride * (lout - 1) + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, padding : padding + length]
            gx = gx[0] if squeeze else gx
        gb = g.sum(axis=(0, 2)) if b is not None and b.requires_grad else None
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out[0] if squeeze else out, parents, back)


def maxpool1d(x: Tensor, window: int = 2, stride: int = 2) -> tuple[Tensor, np.ndarray]:
    """Max over non-overlapping pairs along the last axis. Returns ``(output, argmax indices)``.

    Odd trailing samples are dropped; ties resolve to the first index.
    """
    if window != 2 or stride != 2:
        raise NotImplementedError("only window=2, stride=2 pooling is provided")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    length = xd.shape[-1]
    out, idx = kernels.maxpool2_forward(xd)

    def back(g):
        g = g[None] if squeeze else g
        gx = kernels.maxpool2_backward(g, idx, length)
        return (gx[0] if squeeze else gx,)

    if squeeze:
        out, idx_ret = out[0], idx[0]
    else:
        idx_ret = idx
    return _make(out, (x,), back), idx_ret


def batchnorm1d(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel normalization of ``x`` [B, C, L].

    Training mode uses the batch statistics (over batch and time) and updates
    ``running_mean`` / ``running_var`` in place (unbiased variance); eval mode
    uses the running statistics.
    """
    if x.ndim != 3 or x.shape[1] != scale.shape[0]:
        raise ShapeError(f"batchnorm1d expects [B, {scale.shape[0]}, L], got {x.shape}")
    xd = x.data
    c = xd.shape[1]
    bshape = (1, c, 1)
    if training:
        n = xd.shape[0] * xd.shape[2]
        mu = xd.mean(axis=(0, 2))
        var = xd.var(axis=(0, 2))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * scale.data.reshape(bshape) + shift.data.reshape(bshape)

    def back(g):
        gscale = (g * xhat).sum(axis=(0, 2))
        gshift = g.sum(axis=(0, 2))
        dxhat = g * scale.data.reshape(bshape)
        if training:
            m = xd.shape[0] * xd.shape[2]
            gx = (inv.reshape(bshape) / m) * (
                m * dxhat
                - dxhat.sum(axis=(0, 2), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
            )
        else:
            gx = dxhat * inv.reshape(bshape)
        return gx, gscale, gshift

    return _make(out, (x, scale, shift), back)
