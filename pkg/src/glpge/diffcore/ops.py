"""Differentiable operations over 4-D tensors.

Every public op registers itself in ``OP_REGISTRY`` so tests can enumerate
the full operator set; each one installs a backward closure on its output.
Binary elementwise ops broadcast under NumPy rules and reduce gradients
back over the broadcast axes.
"""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, ShapeError
from . import kernels
from .resample import lerp_indices, resize_bilinear_nchw
from .tensor import Tensor, _KinkTracker, grad_enabled, make_result, note_kink

OP_REGISTRY: dict = {}


def register(name):
    def deco(fn):
        OP_REGISTRY[name] = fn
        return fn

    return deco


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to ``shape`` after NumPy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: mixed dtypes {a.dtype} and {b.dtype}")


# -- convolution and linear --------------------------------------------------


@register("conv2d")
def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation with bias; w is (Co,Ci,kh,kw), b is (1,Co,1,1)."""
    if stride < 1 or pad < 0:
        raise ArgumentError(f"conv2d: stride must be >= 1 and pad >= 0, got {stride}, {pad}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    if b.shape != (1, w.shape[0], 1, 1):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {w.shape[0]} output channels")
    if x.shape[2] + 2 * pad < w.shape[2] or x.shape[3] + 2 * pad < w.shape[3]:
        raise ShapeError(f"conv2d: input {x.shape} smaller than kernel {w.shape} at pad {pad}")
    impl = kernels.active
    needs_grad = grad_enabled() and (x.requires_grad or w.requires_grad or b.requires_grad)
    cache: dict | None = {} if (needs_grad and w.requires_grad) else None
    out = impl.conv2d_forward(x.data, w.data, b.data.reshape(-1), stride, pad, cache)

    def backward(dy):
        if x.requires_grad:
            x.accumulate_grad(impl.conv2d_backward_input(dy, w.data, x.shape, stride, pad))
        if w.requires_grad:
            w.accumulate_grad(impl.conv2d_backward_weight(dy, x.data, w.shape, stride, pad, cache))
        if b.requires_grad:
            b.accumulate_grad(dy.sum(axis=(0, 2, 3)).reshape(b.shape))

    return make_result(out, (x, w, b), "conv2d", backward)


@register("linear")
def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fully-connected layer on (N,F,1,1) inputs; w is (O,F,1,1), b (1,O,1,1)."""
    if x.shape[2:] != (1, 1):
        raise ShapeError(f"linear: expected (N,F,1,1) input, got {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input features {x.shape[1]} != weight features {w.shape[1]}")
    n, f = x.shape[:2]
    o = w.shape[0]
    x2 = x.data.reshape(n, f)
    w2 = w.data.reshape(o, f)
    out = (x2 @ w2.T + b.data.reshape(1, o)).reshape(n, o, 1, 1)

    def backward(dy):
        dy2 = dy.reshape(n, o)
        if x.requires_grad:
            x.accumulate_grad((dy2 @ w2).reshape(x.shape))
        if w.requires_grad:
            w.accumulate_grad((dy2.T @ x2).reshape(w.shape))
        if b.requires_grad:
            b.accumulate_grad(dy2.sum(axis=0).reshape(b.shape))

    return make_result(out, (x, w, b), "linear", backward)


# -- elementwise -------------------------------------------------------------


@register("relu")
def relu(x: Tensor) -> Tensor:
    if _KinkTracker.enabled and x.size:
        note_kink(np.abs(x.data).min())
    mask = x.data > 0
    out = np.maximum(x.data, 0)

    def backward(dy):
        x.accumulate_grad(dy * mask)

    return make_result(out, (x,), "relu", backward)


@register("leaky_relu")
def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if _KinkTracker.enabled and x.size:
        note_kink(np.abs(x.data).min())
    scale = np.where(x.data > 0, x.dtype.type(1.0), x.dtype.type(slope))
    out = x.data * scale

    def backward(dy):
        x.accumulate_grad(dy * scale)

    return make_result(out, (x,), "leaky_relu", backward)


@register("tanh")
def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(dy):
        x.accumulate_grad(dy * (1 - out * out))

    return make_result(out, (x,), "tanh", backward)


@register("sigmoid")
def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    out = out.astype(x.dtype, copy=False)

    def backward(dy):
        x.accumulate_grad(dy * out * (1 - out))

    return make_result(out, (x,), "sigmoid", backward)


@register("add")
def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def backward(dy):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(dy, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(dy, b.shape))

    return make_result(out, (a, b), "add", backward)


@register("sub")
def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def backward(dy):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(dy, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-dy, b.shape))

    return make_result(out, (a, b), "sub", backward)


@register("mul")
def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = a.data * b.data

    def backward(dy):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(dy * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(dy * a.data, b.shape))

    return make_result(out, (a, b), "mul", backward)


@register("div")
def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(dy):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(dy / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-dy * a.data / (b.data * b.data), b.shape))

    return make_result(out, (a, b), "div", backward)


@register("add_scalar")
def add_scalar(x: Tensor, c: float) -> Tensor:
    out = x.data + x.dtype.type(c)

    def backward(dy):
        x.accumulate_grad(dy)

    return make_result(out, (x,), "add_scalar", backward)


@register("mul_scalar")
def mul_scalar(x: Tensor, c: float) -> Tensor:
    cv = x.dtype.type(c)
    out = x.data * cv

    def backward(dy):
        x.accumulate_grad(dy * cv)

    return make_result(out, (x,), "mul_scalar", backward)


@register("abs")
def abs_val(x: Tensor) -> Tensor:
    if _KinkTracker.enabled and x.size:
        note_kink(np.abs(x.data).min())
    sign = np.sign(x.data)
    out = np.abs(x.data)

    def backward(dy):
        x.accumulate_grad(dy * sign)

    return make_result(out, (x,), "abs", backward)


@register("clamp01")
def clamp01(x: Tensor) -> Tensor:
    """Clamp to [0,1]; gradient is zero outside the interval."""
    if _KinkTracker.enabled and x.size:
        note_kink(min(np.abs(x.data).min(), np.abs(x.data - 1).min()))
    mask = (x.data >= 0) & (x.data <= 1)
    out = np.clip(x.data, 0, 1)

    def backward(dy):
        x.accumulate_grad(dy * mask)

    return make_result(out, (x,), "clamp01", backward)


@register("detach")
def detach(x: Tensor) -> Tensor:
    return x.detach()


# -- structure ---------------------------------------------------------------


@register("concat_batch")
def concat_batch(a: Tensor, b: Tensor) -> Tensor:
    """Stack two tensors along the batch axis."""
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_batch: per-item shapes differ ({a.shape} vs {b.shape})")
    out = np.concatenate([a.data, b.data], axis=0)
    na = a.shape[0]

    def backward(dy):
        if a.requires_grad:
            a.accumulate_grad(dy[:na])
        if b.requires_grad:
            b.accumulate_grad(dy[na:])

    return make_result(out, (a, b), "concat_batch", backward)


@register("concat_channels")
def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    if len(tensors) == 1:
        t = tensors[0]

        def backward_single(dy):
            t.accumulate_grad(dy)

        return make_result(t.data.copy(), (t,), "concat_channels", backward_single)
    first = tensors[0]
    for t in tensors[1:]:
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ShapeError(
                f"concat_channels: spatial/batch extents differ ({first.shape} vs {t.shape})"
            )
    out = np.concatenate([t.data for t in tensors], axis=1)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(dy):
        for t, piece in zip(tensors, np.split(dy, splits, axis=1)):
            if t.requires_grad:
                t.accumulate_grad(piece)

    return make_result(out, tuple(tensors), "concat_channels", backward)


@register("slice_spatial")
def slice_spatial(x: Tensor, top: int = 0, bottom: int = 0, left: int = 0, right: int = 0) -> Tensor:
    """Crop rows/columns off the spatial borders (backward zero-pads)."""
    n, c, h, w = x.shape
    if top + bottom >= h or left + right >= w:
        raise ShapeError(f"slice_spatial: crop ({top},{bottom},{left},{right}) exceeds {x.shape}")
    out = x.data[:, :, top : h - bottom, left : w - right].copy()

    def backward(dy):
        dx = np.zeros_like(x.data)
        dx[:, :, top : h - bottom, left : w - right] = dy
        x.accumulate_grad(dx)

    return make_result(out, (x,), "slice_spatial", backward)


@register("global_avg_pool")
def global_avg_pool(x: Tensor) -> Tensor:
    out = x.data.mean(axis=(2, 3), keepdims=True)
    scale = 1.0 / (x.shape[2] * x.shape[3])

    def backward(dy):
        x.accumulate_grad(np.broadcast_to(dy * x.dtype.type(scale), x.shape).copy())

    return make_result(out, (x,), "global_avg_pool", backward)


@register("max_pool2d")
def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; extents must be even."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2d: extents must be even, got {h}x{w}")
    windows = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )
    if _KinkTracker.enabled and windows.size:
        part = np.partition(windows, 2, axis=-1)
        note_kink((part[..., -1] - part[..., -2]).min())
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(dy):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
        dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape)
        x.accumulate_grad(dx)

    return make_result(out, (x,), "max_pool2d", backward)


@register("mean")
def mean(x: Tensor) -> Tensor:
    out = np.array(x.data.mean(dtype=np.float64), dtype=x.dtype).reshape(1, 1, 1, 1)
    scale = 1.0 / x.size

    def backward(dy):
        x.accumulate_grad(np.full(x.shape, dy.reshape(()) * scale, dtype=x.dtype))

    return make_result(out, (x,), "mean", backward)


@register("sum")
def sum_all(x: Tensor) -> Tensor:
    out = np.array(x.data.sum(dtype=np.float64), dtype=x.dtype).reshape(1, 1, 1, 1)

    def backward(dy):
        x.accumulate_grad(np.full(x.shape, dy.reshape(()), dtype=x.dtype))

    return make_result(out, (x,), "sum", backward)


@register("reshape")
def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size or len(shape) != 4:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.data.reshape(shape).copy()

    def backward(dy):
        x.accumulate_grad(dy.reshape(x.shape))

    return make_result(out, (x,), "reshape", backward)


# -- resolution rearrangement ------------------------------------------------


@register("pixel_unshuffle")
def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth: (C,H,W) -> (C*r^2, H/r, W/r).

    Sub-pixel ordering is row-major within each r x r block: the block
    offset (dy, dx) of source channel c lands at channel c*r^2 + dy*r + dx.
    """
    if r < 1:
        raise ArgumentError(f"pixel_unshuffle: r must be >= 1, got {r}")
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: extents {h}x{w} not divisible by r={r}")
    if r == 1:
        out = x.data.copy()
    else:
        out = (
            x.data.reshape(n, c, h // r, r, w // r, r)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, c * r * r, h // r, w // r)
            .copy()
        )

    def backward(dy):
        if r == 1:
            x.accumulate_grad(dy)
        else:
            x.accumulate_grad(
                dy.reshape(n, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3).reshape(x.shape)
            )

    return make_result(out, (x,), "pixel_unshuffle", backward)


@register("pixel_shuffle")
def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space; exact inverse of pixel_unshuffle for the same r."""
    if r < 1:
        raise ArgumentError(f"pixel_shuffle: r must be >= 1, got {r}")
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    if r == 1:
        out = x.data.copy()
    else:
        out = (
            x.data.reshape(n, c // (r * r), r, r, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, c // (r * r), h * r, w * r)
            .copy()
        )

    def backward(dy):
        if r == 1:
            x.accumulate_grad(dy)
        else:
            x.accumulate_grad(
                dy.reshape(n, c // (r * r), h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(x.shape)
            )

    return make_result(out, (x,), "pixel_shuffle", backward)


def _lerp_matrix(src_len: int, dst_len: int, dtype) -> np.ndarray:
    """Dense (dst, src) interpolation weights matching the lerp forward."""
    i0, i1, f = lerp_indices(src_len, dst_len, np.float64)
    m = np.zeros((dst_len, src_len), dtype=np.float64)
    rows = np.arange(dst_len)
    np.add.at(m, (rows, i0), 1.0 - f)
    np.add.at(m, (rows, i1), f)
    return m.astype(dtype)


@register("resize_bilinear")
def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Differentiable bilinear resize (half-pixel centers, edge replicate)."""
    if out_h < 1 or out_w < 1:
        raise ArgumentError(f"resize_bilinear: target extents must be >= 1, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    out = resize_bilinear_nchw(x.data, out_h, out_w)

    def backward(dy):
        mh = _lerp_matrix(h, out_h, x.dtype)
        mw = _lerp_matrix(w, out_w, x.dtype)
        tmp = np.tensordot(dy, mh, axes=([2], [0]))  # (N, C, Wo, H)
        dx = np.tensordot(tmp, mw, axes=([2], [0]))  # (N, C, H, W)
        x.accumulate_grad(np.ascontiguousarray(dx))

    return make_result(out, (x,), "resize_bilinear", backward)


@register("upsample_bilinear")
def upsample_bilinear(x: Tensor, scale: int) -> Tensor:
    """Integer-factor bilinear upsampling; scale 1 is the identity."""
    if not isinstance(scale, int) or scale < 1:
        raise ArgumentError(f"upsample_bilinear: scale must be an integer >= 1, got {scale}")
    return resize_bilinear(x, x.shape[2] * scale, x.shape[3] * scale)
