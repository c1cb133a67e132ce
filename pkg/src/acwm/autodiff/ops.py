"""Differentiable kernels.

Network kernels (conv1d, linear, batchnorm1d, relu, global_meanpool,
residual_add) plus the handful of elementwise and reduction ops the losses
are written in. Every kernel computes in the dtype of its inputs, so the same
code runs at float32 for training and float64 for finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import NonFiniteError, ShapeError, Tensor, as_tensor, make_node

KERNEL_KINDS = ("conv1d", "linear", "batchnorm1d", "relu", "global_meanpool", "residual_add")


def _check_finite(x: Tensor, what: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError(f"non-finite values in {what}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# network kernels


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis. x: [B, Cin, L], weight: [Cout, Cin, K]."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects [B, C, L] input and [Cout, Cin, K] weight, "
                         f"got {x.shape} and {weight.shape}")
    B, cin, L = x.shape
    cout, wcin, K = weight.shape
    if cin != wcin:
        raise ShapeError(f"conv1d channel mismatch: input has {cin}, weight expects {wcin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv1d bias shape {bias.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    Lp = L + 2 * padding
    if Lp < K:
        raise ShapeError(f"conv1d input length {L} (padded {Lp}) shorter than kernel {K}")
    _check_finite(x, "conv1d input")
    if K == 1 and padding == 0:
        return _pointwise_conv(x, weight, bias, stride)

    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    lout = (Lp - K) // stride + 1
    win = sliding_window_view(xp, K, axis=2)[:, :, ::stride, :]  # [B, Cin, Lout, K]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * lout, cin * K)
    wmat = weight.data.reshape(cout, cin * K)
    out = cols @ wmat.T  # [B*Lout, Cout]
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, lout, cout).transpose(0, 2, 1))

    def vjp(g):
        gm = g.transpose(0, 2, 1).reshape(B * lout, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(B, lout, cin, K)
            gxp = np.zeros((B, cin, Lp), dtype=gcols.dtype)
            stop = stride * (lout - 1) + 1
            for k in range(K):
                gxp[:, :, k:k + stop:stride] += gcols[:, :, :, k].transpose(0, 2, 1)
            gx = gxp[:, :, padding:padding + L] if padding else gxp
        if weight.requires_grad:
            gw = (gm.T @ cols).reshape(cout, cin, K)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, vjp)


def _pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int) -> Tensor:
    xs = x.data[:, :, ::stride] if stride > 1 else x.data
    w2 = weight.data[:, :, 0]
    out = np.matmul(w2, xs)
    if bias is not None:
        out += bias.data[None, :, None]

    def vjp(g):
        gx = gw = gb = None
        if x.requires_grad:
            gs = np.matmul(w2.T, g)
            if stride > 1:
                gx = np.zeros(x.shape, dtype=gs.dtype)
                gx[:, :, ::stride] = gs
            else:
                gx = gs
        if weight.requires_grad:
            gw = np.matmul(g, xs.transpose(0, 2, 1)).sum(axis=0)[:, :, None]
        if bias is not None and bias.requires_grad:
            gb = np.einsum("bol->o", g)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map y = x W^T + b. x: [B, in], weight: [out, in]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects [B, in] input, got {x.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear dim mismatch: input {x.shape[1]}, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear bias shape {bias.shape} != ({weight.shape[0]},)")
    _check_finite(x, "linear input")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def vjp(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, vjp)


@dataclass
class BatchNormStats:
    """Running statistics for one batchnorm layer, updated by EMA in train mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    num_batches: int = field(default=0)

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormStats":
        return cls(np.zeros(channels, np.float32), np.ones(channels, np.float32), momentum, eps)


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, stats: BatchNormStats,
                train: bool) -> Tensor:
    """Normalize per channel over batch (and length, for 3-d input).

    Train mode uses batch statistics and updates ``stats``; eval mode uses the
    running statistics so each record is normalized independently of its batch.
    """
    if x.ndim not in (2, 3):
        raise ShapeError(f"batchnorm1d expects [B, C] or [B, C, L], got {x.shape}")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm1d affine params must have shape ({C},)")
    _check_finite(x, "batchnorm1d input")
    bshape = (1, C, 1) if x.ndim == 3 else (1, C)
    spec = "bcl" if x.ndim == 3 else "bc"
    csum = f"{spec}->c"
    cdot = f"{spec},{spec}->c"
    xd = x.data
    n = xd.size // C
    if train:
        if x.shape[0] < 2:
            raise ShapeError("batchnorm1d in train mode needs batch size >= 2")
        mean = np.einsum(csum, xd) / n
        xc = xd - mean.reshape(bshape)
        var = np.einsum(cdot, xc, xc) / n
        m = stats.momentum
        stats.mean = ((1 - m) * stats.mean + m * mean).astype(np.float32)
        stats.var = ((1 - m) * stats.var + m * var * (n / (n - 1))).astype(np.float32)
        stats.num_batches += 1
    else:
        mean = stats.mean.astype(xd.dtype)
        var = stats.var.astype(xd.dtype)
        xc = xd - mean.reshape(bshape)
    invstd = (1.0 / np.sqrt(var + stats.eps)).astype(xd.dtype)
    scale = invstd * gamma.data
    out = xc * scale.reshape(bshape)
    out += beta.data.reshape(bshape)

    def vjp(g):
        gsum = np.einsum(csum, g)
        gxc = np.einsum(cdot, g, xc)
        gx = None
        if x.requires_grad:
            if train:
                k3 = scale * invstd * invstd * gxc / n
                k2 = scale * gsum / n
                gx = g * scale.reshape(bshape)
                gx -= xc * k3.reshape(bshape)
                gx -= k2.reshape(bshape)
            else:
                gx = g * scale.reshape(bshape)
        gg = invstd * gxc if gamma.requires_grad else None
        gb = gsum if beta.requires_grad else None
        return gx, gg, gb

    return make_node(out, (x, gamma, beta), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask

    def vjp(g):
        return (g * mask,)

    return make_node(out, (x,), vjp)


def global_meanpool(x: Tensor) -> Tensor:
    """[B, C, L] -> [B, C] mean over the length axis."""
    if x.ndim != 3:
        raise ShapeError(f"global_meanpool expects [B, C, L], got {x.shape}")
    L = x.shape[2]
    out = x.data.mean(axis=2)

    def vjp(g):
        return (np.repeat(g[:, :, None] / L, L, axis=2),)

    return make_node(out, (x,), vjp)


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"residual_add shape mismatch {a.shape} vs {b.shape}")
    return make_node(a.data + b.data, (a, b), lambda g: (g, g))


def kernel_forward(kind: str, inputs, params: dict | None = None, **cfg) -> Tensor:
    """Dispatch one network kernel by name.

    ``params`` maps parameter roles to tensors: ``weight``/``bias`` for conv1d
    and linear, ``gamma``/``beta`` plus a ``stats`` entry for batchnorm1d.
    """
    params = params or {}
    inputs = [as_tensor(t) for t in (inputs if isinstance(inputs, (list, tuple)) else [inputs])]
    if kind == "conv1d":
        return conv1d(inputs[0], params["weight"], params.get("bias"),
                      stride=cfg.get("stride", 1), padding=cfg.get("padding", 0))
    if kind == "linear":
        return linear(inputs[0], params["weight"], params.get("bias"))
    if kind == "batchnorm1d":
        return batchnorm1d(inputs[0], params["gamma"], params["beta"], params["stats"],
                           train=cfg.get("train", True))
    if kind == "relu":
        return relu(inputs[0])
    if kind == "global_meanpool":
        return global_meanpool(inputs[0])
    if kind == "residual_add":
        if len(inputs) != 2:
            raise ShapeError("residual_add takes exactly two inputs")
        return residual_add(inputs[0], inputs[1])
    raise ValueError(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}")


# ---------------------------------------------------------------------------
# elementwise and reduction ops used by the losses


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(ad * bd, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return make_node(ad @ bd, (a, b), vjp)


def square(x: Tensor) -> Tensor:
    xd = x.data
    return make_node(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def total(x: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    shape = x.shape
    return make_node(np.asarray(x.data.sum()), (x,),
                     lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.shape
    return make_node(np.asarray(x.data.mean()), (x,),
                     lambda g: (np.full(shape, g / n, dtype=x.data.dtype),))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make_node(out, tensors, vjp)


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """x[start:stop] along the first axis."""
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[start:stop] = g
        return (gx,)

    return make_node(x.data[start:stop], (x,), vjp)
