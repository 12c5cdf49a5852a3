"""Bilinear index/weight computation shared by graph ops and image I/O.

Convention: half-pixel centers, no corner alignment. A destination pixel j
samples source coordinate (j + 0.5) * src / dst - 0.5, clamped to the valid
range (edges replicate). Interpolation uses the lerp form
``a + (b - a) * f`` so constant inputs are reproduced bit-exactly.
"""

from __future__ import annotations

import numpy as np


def lerp_indices(src_len: int, dst_len: int, dtype=np.float32):
    """Return (i0, i1, frac) arrays mapping dst positions onto src."""
    pos = (np.arange(dst_len, dtype=np.float64) + 0.5) * (src_len / dst_len) - 0.5
    base = np.floor(pos)
    frac = pos - base
    i0 = np.clip(base, 0, src_len - 1).astype(np.intp)
    i1 = np.clip(base + 1, 0, src_len - 1).astype(np.intp)
    return i0, i1, frac.astype(dtype)


def resize_bilinear_nchw(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (N,C,H,W) array; exact on constant inputs."""
    _, _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()
    i0, i1, fh = lerp_indices(h, out_h, x.dtype)
    a = x[:, :, i0, :]
    tmp = a + (x[:, :, i1, :] - a) * fh[None, None, :, None]
    j0, j1, fw = lerp_indices(w, out_w, x.dtype)
    a = tmp[:, :, :, j0]
    return a + (tmp[:, :, :, j1] - a) * fw


def resize_nearest_nchw(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize with the same half-pixel-center convention."""
    _, _, h, w = x.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * (h / out_h)).astype(np.intp), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * (w / out_w)).astype(np.intp), w - 1)
    return x[:, :, rows, :][:, :, :, cols]
