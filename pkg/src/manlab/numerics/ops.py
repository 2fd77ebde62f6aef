"""Differentiable ops on :class:`Tensor`.

Image tensors use the (batch, channel, height, width) layout at the API.
Convolutions internally go through a channels-last im2col, which is the
fastest arrangement for single-threaded BLAS.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, record

__all__ = [
    "add", "sub", "mul", "div", "matmul", "relu", "sigmoid", "tanh", "exp", "log",
    "softmax", "log_softmax", "cross_entropy", "sum", "mean", "l2_norm", "reshape",
    "transpose", "getitem", "concat", "channel_scale", "conv2d", "conv_transpose2d",
    "max_pool2d", "batch_norm", "instance_norm", "flatten",
]


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = (_lift(a, b), b) if not isinstance(a, Tensor) else (a, _lift(b, a))
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = (_lift(a, b), b) if not isinstance(a, Tensor) else (a, _lift(b, a))
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = (_lift(a, b), b) if not isinstance(a, Tensor) else (a, _lift(b, a))
    _broadcast_shape(a, b, "mul")

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = (_lift(a, b), b) if not isinstance(a, Tensor) else (a, _lift(b, a))
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), backward, "div")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (x.data > 0),)

    return record(out, (x,), backward, "relu")


def sigmoid(x: Tensor, open_interval: bool = False) -> Tensor:
    """Logistic function. ``open_interval`` keeps outputs strictly inside (0, 1).

    Plain float32 rounding returns exactly 1.0 once x exceeds about 17; with
    ``open_interval`` such values are pulled to the nearest representable
    numbers inside the interval.
    """
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype, copy=False)
    if open_interval:
        out = np.clip(out, np.finfo(d.dtype).tiny, np.nextafter(d.dtype.type(1), d.dtype.type(0)))

    def backward(g):
        return (g * out * (1 - out),)

    return record(out, (x,), backward, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1 - out * out),)

    return record(out, (x,), backward, "tanh")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return record(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return record(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return record(a.data @ b.data, (a, b), backward, "matmul")


# -- normalizing / losses -----------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record(out, (x,), backward, "log_softmax")


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Softmax cross-entropy, averaged over the batch.

    ``logits`` is (K,) with an integer target, or (B, K) with B targets.
    """
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    if z.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be (K,) or (B, K), got {logits.shape}")
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if t.shape != (z.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {t.shape}")
    if (t < 0).any() or (t >= z.shape[1]).any():
        raise ValueError(f"cross_entropy: target out of range [0, {z.shape[1]})")
    rows = np.arange(z.shape[0])
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = np.asarray((lse - shifted[rows, t]).mean(), dtype=z.dtype)

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, t] -= 1
        p *= g / z.shape[0]
        return (p[0] if single else p,)

    return record(loss, (logits,), backward, "cross_entropy")


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = np.asarray(x.data.mean(axis=axes, keepdims=keepdims))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return record(out, (x,), backward, "mean")


def l2_norm(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm over ``axis`` (all axes by default).

    The gradient at an exactly-zero vector is taken as zero.
    """
    axes = _norm_axes(axis, x.ndim)
    n = np.sqrt((x.data * x.data).sum(axis=axes, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        safe = np.where(n > 0, n, 1)
        return (g * np.where(n > 0, x.data / safe, 0),)

    out = n if keepdims else np.asarray(n.squeeze(axis=axes))
    return record(out, (x,), backward, "l2_norm")


# -- shape ops ----------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return record(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return record(np.array(out) if basic else out, (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat: nothing to concatenate")
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref.shape)) if i != axis
        ):
            raise ShapeError(f"concat along {axis}: shapes {ref.shape} and {t.shape} differ")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def channel_scale(feature: Tensor, gains: Tensor) -> Tensor:
    """Multiply every channel map of ``feature`` by its scalar gain.

    Shapes: feature (C, H, W) with gains (C,), or (B, C, H, W) with (B, C).
    """
    if feature.ndim not in (3, 4) or gains.shape != feature.shape[:-2]:
        raise ShapeError(
            f"channel_scale: feature {feature.shape} needs gains of shape "
            f"{feature.shape[:-2]}, got {gains.shape}"
        )
    gx = gains.data[..., None, None]

    def backward(g):
        gf = g * gx if feature.requires_grad else None
        gg = (g * feature.data).sum(axis=(-2, -1)) if gains.requires_grad else None
        return gf, gg

    return record(feature.data * gx, (feature, gains), backward, "channel_scale")


# -- convolution --------------------------------------------------------------

def _nhwc(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.transpose(0, 2, 3, 1))


def _im2col(xh: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # xh: padded (B, H, W, C) -> (B*Ho*Wo, kh*kw*C) with (kh, kw, C) ordering
    win = sliding_window_view(xh, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    b, ho, wo, c = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * c), ho, wo


def _col2im(cols: np.ndarray, hp: int, wp: int, stride: int) -> np.ndarray:
    # cols: (B, Ho, Wo, kh, kw, C) -> summed (B, hp, wp, C)
    b, ho, wo, kh, kw, c = cols.shape
    out = np.zeros((b, hp, wp, c), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += cols[:, :, :, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation. ``weight`` is (out_channels, in_channels, kh, kw)."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} and weight {weight.shape} are incompatible")
    b, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"conv2d: kernel {weight.shape[2:]} larger than padded input {x.shape}")
    xh = np.pad(_nhwc(x.data), ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols, ho, wo = _im2col(xh, kh, kw, stride)
    wm = weight.data.transpose(2, 3, 1, 0).reshape(-1, o)
    out = cols @ wm
    if bias is not None:
        out += bias.data
    out = out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)
    keep_cols = cols if weight.requires_grad else None
    del cols

    def backward(g):
        g2 = _nhwc(g).reshape(-1, o)
        gw = gx = gb = None
        if weight.requires_grad:
            gw = np.ascontiguousarray((keep_cols.T @ g2).reshape(kh, kw, c, o).transpose(3, 2, 0, 1))
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            dcols = (g2 @ wm.T).reshape(b, ho, wo, kh, kw, c)
            full = _col2im(dcols, h + 2 * pad, w + 2 * pad, stride)
            gx = full[:, pad:pad + h, pad:pad + w].transpose(0, 3, 1, 2)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, backward, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d` with the same weight. ``weight`` is (in, out, kh, kw).

    Output spatial size is ``(H - 1) * stride - 2 * pad + kh``.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} and weight {weight.shape} are incompatible")
    b, c, h, w = x.shape
    _, o, kh, kw = weight.shape
    hf, wf = (h - 1) * stride + kh, (w - 1) * stride + kw
    ho, wo = hf - 2 * pad, wf - 2 * pad
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv_transpose2d: padding {pad} leaves no output for input {x.shape}")
    x2 = _nhwc(x.data).reshape(-1, c)
    wm = weight.data.transpose(0, 2, 3, 1).reshape(c, -1)
    cols = (x2 @ wm).reshape(b, h, w, kh, kw, o)
    full = _col2im(cols, hf, wf, stride)
    del cols
    out = full[:, pad:pad + ho, pad:pad + wo]
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 3, 1, 2)
    keep_x2 = x2 if weight.requires_grad else None

    def backward(g):
        gh = np.pad(_nhwc(g), ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        gcols, _, _ = _im2col(gh, kh, kw, stride)
        gx = gw = gb = None
        if x.requires_grad:
            gx = (gcols @ wm.T).reshape(b, h, w, c).transpose(0, 3, 1, 2)
        if weight.requires_grad:
            gw = np.ascontiguousarray((keep_x2.T @ gcols).reshape(c, kh, kw, o).transpose(0, 3, 1, 2))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, backward, "conv_transpose2d")


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that don't fill a window are dropped.

    Ties route the gradient to the first maximal element in row-major order.
    """
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d: expected (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho == 0 or wo == 0:
        raise ShapeError(f"max_pool2d: window {size} larger than input {x.shape}")
    win = (
        x.data[:, :, : ho * size, : wo * size]
        .reshape(b, c, ho, size, wo, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, ho, wo, size * size)
    )
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros((b, c, ho, wo, size * size), dtype=g.dtype)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        gw = gw.reshape(b, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * size, wo * size)
        if (ho * size, wo * size) != (h, w):
            gw = np.pad(gw, ((0, 0), (0, 0), (0, h - ho * size), (0, w - wo * size)))
        return (gw,)

    return record(out, (x,), backward, "max_pool2d")


# -- normalization ------------------------------------------------------------

def _affine_shape(x: Tensor) -> tuple[int, ...]:
    return (1, x.shape[1]) + (1,) * (x.ndim - 2)


def _normalize(x: Tensor, gamma: Tensor, beta: Tensor, axes, mean_, var_, eps, batch_stats, op):
    shape = _affine_shape(x)
    inv_std = 1.0 / np.sqrt(var_ + eps)
    xhat = (x.data - mean_) * inv_std
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
    m = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        gg = (g * xhat).sum(axis=(0,) + tuple(range(2, x.ndim))) if gamma.requires_grad else None
        gb = g.sum(axis=(0,) + tuple(range(2, x.ndim))) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            if batch_stats:
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                gx = inv_std * (dxhat - s1 / m - xhat * (s2 / m))
            else:
                gx = dxhat * inv_std
            gx = gx.astype(x.dtype, copy=False)
        return gx, gg, gb

    return record(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, op)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over batch (and spatial) axes.

    In training mode batch statistics are used and the running buffers are
    updated in place; otherwise the running statistics are used.
    """
    if x.ndim not in (2, 4) or gamma.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: input {x.shape} with gamma {gamma.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = _affine_shape(x)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        m = x.data.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(-1) * (m / max(m - 1, 1))
        return _normalize(x, gamma, beta, axes, mu, var, eps, True, "batch_norm")
    return _normalize(
        x, gamma, beta, axes, running_mean.reshape(shape), running_var.reshape(shape), eps, False, "batch_norm"
    )


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over spatial axes (same in train and eval)."""
    if x.ndim != 4 or gamma.shape != (x.shape[1],):
        raise ShapeError(f"instance_norm: input {x.shape} with gamma {gamma.shape}")
    axes = (2, 3)
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    return _normalize(x, gamma, beta, axes, mu, var, eps, True, "instance_norm")


def argmax(x) -> np.ndarray:
    """Row-wise argmax of (B, K) scores; ties go to the lowest index."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return data.argmax(axis=-1)

