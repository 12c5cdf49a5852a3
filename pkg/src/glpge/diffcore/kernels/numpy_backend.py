"""Vectorized NumPy implementation of the convolution kernels.

The general path lowers convolution to a single BLAS matmul per row chunk
over an NHWC im2col buffer (bounded memory, fixed chunk size so results
are reproducible run to run). 1x1 kernels collapse to one matmul; pure
single-channel kernels (the separable Gaussian blurs) use a scalar-tap
accumulation that never leaves NCHW. The input gradient is computed as a
forward convolution with the flipped kernel over the zero-dilated upstream
gradient, so no scatter-adds are needed anywhere.
"""

from __future__ import annotations

import numpy as np

_CHUNK_FLOATS = 4_000_000  # im2col buffer budget per chunk (per dtype element)


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _shifted_view(x_pad, i, j, ho, wo, stride):
    return x_pad[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride]


def _pad_hw(x, pad):
    if not pad:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _row_chunk(n, wo, kh, kw, ci, ho):
    per_row = max(1, n * wo * kh * kw * ci)
    return max(1, min(ho, _CHUNK_FLOATS // per_row))


def _im2col_rows(xt, r0, rows, wo, kh, kw, ci, stride):
    """Gather (N, rows, Wo, kh*kw*Ci) patches from NHWC-padded input."""
    n = xt.shape[0]
    cols = np.empty((n, rows, wo, kh * kw, ci), dtype=xt.dtype)
    for i in range(kh):
        for j in range(kw):
            src = xt[
                :,
                r0 * stride + i : (r0 + rows - 1) * stride + i + 1 : stride,
                j : j + (wo - 1) * stride + 1 : stride,
                :,
            ]
            cols[:, :, :, i * kw + j, :] = src
    return cols.reshape(n * rows * wo, kh * kw * ci)


def _unshuffle2(x):
    """Space-to-depth by 2: (N,C,H,W) -> (N,4C,H/2,W/2), row-major taps."""
    n, c, h, w = x.shape
    return np.ascontiguousarray(
        x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4).reshape(n, 4 * c, h // 2, w // 2)
    )


def _shuffle2(x):
    n, c, h, w = x.shape
    return np.ascontiguousarray(
        x.reshape(n, c // 4, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c // 4, 2 * h, 2 * w)
    )


def _fold_weight2(w):
    """Rearrange (Co,Ci,kh,kw) so a stride-2 conv becomes stride-1 on the
    space-to-depth input: tap (i,j) lands at channel ci*4 + (i%2)*2 + (j%2),
    position (i//2, j//2)."""
    co, ci, kh, kw = w.shape
    wf = w.reshape(co, ci, kh // 2, 2, kw // 2, 2).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(wf.reshape(co, ci * 4, kh // 2, kw // 2))


def _even_pad_geometry(h, w, kh, kw, pad):
    """Padded extents rounded up to even (extra zero row/col never reaches
    any stride-2 output)."""
    hp, wp = h + 2 * pad, w + 2 * pad
    return hp + (hp % 2), wp + (wp % 2)


def _stride2_foldable(kh, kw, stride):
    return stride == 2 and kh % 2 == 0 and kw % 2 == 0 and kh > 1


def conv2d_forward(x, w, b, stride: int, pad: int, cache: dict | None = None):
    """x (N,Ci,H,W), w (Co,Ci,kh,kw), b (Co,) -> (N,Co,Ho,Wo).

    ``cache``, when given, keeps layout-transformed copies of the input so
    the matching backward_weight call can skip regathering them.
    """
    n, ci, h, ww = x.shape
    co, _, kh, kw = w.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(ww, kw, stride, pad)
    if kh == 1 and kw == 1 and pad == 0 and stride == 1:
        acc = np.tensordot(x, w[:, :, 0, 0], axes=([1], [1]))
        acc += b
        return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    if _stride2_foldable(kh, kw, stride):
        hp, wp = _even_pad_geometry(h, ww, kh, kw, pad)
        xp = np.zeros((n, ci, hp, wp), dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + ww] = x
        xu = _unshuffle2(xp)
        if cache is not None:
            cache["xu"] = xu
        out = conv2d_forward(xu, _fold_weight2(w), b, 1, 0, cache)
        return np.ascontiguousarray(out[:, :, :ho, :wo])
    x_pad = _pad_hw(x, pad)
    if ci == 1 and co == 1:
        # scalar taps: elementwise multiply-accumulate, no layout changes
        out = np.full((n, 1, ho, wo), b[0], dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out[:, 0] += w[0, 0, i, j] * _shifted_view(x_pad, i, j, ho, wo, stride)[:, 0]
        return out
    xt = np.ascontiguousarray(x_pad.transpose(0, 2, 3, 1))
    if cache is not None:
        cache["xt"] = xt
    w_mat = np.ascontiguousarray(w.transpose(2, 3, 1, 0)).reshape(kh * kw * ci, co)
    out = np.empty((n, ho, wo, co), dtype=x.dtype)
    chunk = _row_chunk(n, wo, kh, kw, ci, ho)
    for r0 in range(0, ho, chunk):
        rows = min(chunk, ho - r0)
        cols = _im2col_rows(xt, r0, rows, wo, kh, kw, ci, stride)
        out[:, r0 : r0 + rows] = (cols @ w_mat).reshape(n, rows, wo, co)
    out += b
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward_input(dy, w, x_shape, stride: int, pad: int):
    """Gradient of conv2d w.r.t. its input. dy (N,Co,Ho,Wo) -> (N,Ci,H,W).

    Computed as a full stride-1 convolution of the (dilated) upstream
    gradient with the channel-transposed, spatially flipped kernel; the
    result is then aligned by cropping ``pad`` and zero-filling whatever the
    strided forward never reached.
    """
    n, ci, h, ww = x_shape
    co, _, kh, kw = w.shape
    _, _, ho, wo = dy.shape
    if _stride2_foldable(kh, kw, stride):
        hp, wp = _even_pad_geometry(h, ww, kh, kw, pad)
        dy_t = _grow_dy(dy, hp // 2 - kh // 2 + 1, wp // 2 - kw // 2 + 1)
        dx_u = conv2d_backward_input(dy_t, _fold_weight2(w), (n, ci * 4, hp // 2, wp // 2), 1, 0)
        dxp = _shuffle2(dx_u)
        return np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + ww])
    w_flip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    zero = np.zeros(ci, dtype=dy.dtype)
    src = dy
    if stride > 1:
        src = np.zeros((n, co, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=dy.dtype)
        src[:, :, ::stride, ::stride] = dy
    if kh > 1 or kw > 1:
        src = np.pad(src, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    full = conv2d_forward(src, w_flip, zero, 1, 0)
    eh = min(h, full.shape[2] - pad)
    ew = min(ww, full.shape[3] - pad)
    if eh == h and ew == ww:
        return np.ascontiguousarray(full[:, :, pad : pad + h, pad : pad + ww])
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, :eh, :ew] = full[:, :, pad : pad + eh, pad : pad + ew]
    return dx


def _grow_dy(dy, ho_t, wo_t):
    """Zero-extend upstream gradient to the folded forward's output size."""
    if dy.shape[2] == ho_t and dy.shape[3] == wo_t:
        return dy
    grown = np.zeros((dy.shape[0], dy.shape[1], ho_t, wo_t), dtype=dy.dtype)
    grown[:, :, : dy.shape[2], : dy.shape[3]] = dy
    return grown


def conv2d_backward_weight(dy, x, w_shape, stride: int, pad: int, cache: dict | None = None):
    """Gradient of conv2d w.r.t. the kernel. -> (Co,Ci,kh,kw)."""
    co, ci, kh, kw = w_shape
    n = x.shape[0]
    _, _, ho, wo = dy.shape
    if kh == 1 and kw == 1 and pad == 0 and stride == 1:
        return np.tensordot(dy, x, axes=([0, 2, 3], [0, 2, 3])).reshape(w_shape)
    if _stride2_foldable(kh, kw, stride):
        h, ww = x.shape[2], x.shape[3]
        hp, wp = _even_pad_geometry(h, ww, kh, kw, pad)
        xu = cache.get("xu") if cache else None
        if xu is None:
            xp = np.zeros((n, ci, hp, wp), dtype=x.dtype)
            xp[:, :, pad : pad + h, pad : pad + ww] = x
            xu = _unshuffle2(xp)
        dy_t = _grow_dy(dy, hp // 2 - kh // 2 + 1, wp // 2 - kw // 2 + 1)
        dw_f = conv2d_backward_weight(dy_t, xu, (co, ci * 4, kh // 2, kw // 2), 1, 0, cache)
        dw = dw_f.reshape(co, ci, 2, 2, kh // 2, kw // 2).transpose(0, 1, 4, 2, 5, 3)
        return np.ascontiguousarray(dw.reshape(w_shape))
    if ci == 1 and co == 1:
        x_pad = _pad_hw(x, pad)
        dw = np.empty(w_shape, dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dw[0, 0, i, j] = np.sum(dy[:, 0] * _shifted_view(x_pad, i, j, ho, wo, stride)[:, 0],
                                        dtype=dy.dtype)
        return dw
    xt = cache.get("xt") if cache else None
    if xt is None:
        xt = np.ascontiguousarray(_pad_hw(x, pad).transpose(0, 2, 3, 1))
    dy_t = np.ascontiguousarray(dy.transpose(0, 2, 3, 1))
    acc = np.zeros((kh * kw * ci, co), dtype=dy.dtype)
    chunk = _row_chunk(n, wo, kh, kw, ci, ho)
    for r0 in range(0, ho, chunk):
        rows = min(chunk, ho - r0)
        cols = _im2col_rows(xt, r0, rows, wo, kh, kw, ci, stride)
        acc += cols.T @ dy_t[:, r0 : r0 + rows].reshape(n * rows * wo, co)
    return np.ascontiguousarray(acc.reshape(kh, kw, ci, co).transpose(3, 2, 0, 1))
