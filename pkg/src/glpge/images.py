"""Image buffers, file I/O, resampling, and the three global color filters.

Images live in [0,1] float32, (H, W, C) row-major with C in {1, 3}. PNG I/O
goes through Pillow; binary PPM (P6) is parsed directly. Bilinear resizing
shares the half-pixel-center convention of the tensor ops.

Filter semantics (p in the open interval (-1, 1), all outputs clamped):

* brightness:  v' = v * (1 + p)
* contrast:    v' = (v - mu) * (1 + p) + mu, with mu the mean gray luminance
* saturation:  v' = g + (v - g) * (1 + p), with g the per-pixel gray value

Gray uses Rec.601 weights (0.299, 0.587, 0.114). All three filters are the
identity at p = 0 (short-circuited, so the round trip is bit-exact) and
operate directly on stored values (no gamma linearization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .diffcore.resample import resize_bilinear_nchw, resize_nearest_nchw
from .errors import ArgumentError, FormatError, ShapeError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
FILTER_KINDS = ("brightness", "contrast", "saturation")


@dataclass
class ImageBuffer:
    """An (H, W, C) float32 image with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ShapeError(f"image data must be (H, W, 1|3), got {arr.shape}")
        self.data = np.ascontiguousarray(arr, dtype=np.float32)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def to_nchw(self) -> np.ndarray:
        """Lossless (1, C, H, W) view copy for the tensor pipeline."""
        return np.ascontiguousarray(self.data.transpose(2, 0, 1))[None]

    @classmethod
    def from_nchw(cls, arr: np.ndarray, clamp: bool = True) -> "ImageBuffer":
        if arr.ndim != 4 or arr.shape[0] != 1:
            raise ShapeError(f"expected (1, C, H, W), got {arr.shape}")
        hwc = arr[0].transpose(1, 2, 0)
        if clamp:
            hwc = np.clip(hwc, 0.0, 1.0)
        return cls(hwc)

    def copy(self) -> "ImageBuffer":
        return ImageBuffer(self.data.copy())


# -- file I/O ------------------------------------------------------------------


def _read_ppm(raw: bytes) -> np.ndarray:
    # header: P6, whitespace/comment-separated width, height, maxval, then raw RGB
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("PPM header truncated")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError as exc:
            raise FormatError(f"PPM header is not numeric: {raw[start:pos]!r}") from exc
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255 or w < 1 or h < 1:
        raise FormatError(f"unsupported PPM geometry/maxval: {w}x{h}, {maxval}")
    expected = w * h * 3
    body = raw[pos : pos + expected]
    if len(body) != expected:
        raise FormatError(f"PPM payload has {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def load_image(path) -> ImageBuffer:
    """Load a PNG or binary PPM (P6) file; 8-bit values map to v/255."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    raw = path.read_bytes()
    if raw[:2] == b"P6":
        pixels = _read_ppm(raw)
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with Image.open(path) as im:
                if im.mode not in ("L", "RGB"):
                    im = im.convert("RGB")
                pixels = np.asarray(im, dtype=np.uint8)
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise FormatError(f"corrupt PNG file: {path}") from exc
    else:
        raise FormatError(f"unsupported image format (want PNG or PPM P6): {path}")
    return ImageBuffer(pixels.astype(np.float32) / 255.0)


def save_image(img: ImageBuffer, path):
    """Write PNG or PPM depending on the suffix; quantizes by round(v*255)."""
    path = Path(path)
    if not path.parent.exists():
        raise FileNotFoundError(f"parent directory does not exist: {path.parent}")
    q = np.rint(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        rgb = q if q.shape[2] == 3 else np.repeat(q, 3, axis=2)
        header = f"P6\n{img.width} {img.height}\n255\n".encode()
        path.write_bytes(header + rgb.tobytes())
    elif suffix == ".png":
        arr = q[:, :, 0] if q.shape[2] == 1 else q
        Image.fromarray(arr).save(path, format="PNG")
    else:
        raise FormatError(f"unsupported output format: {path.suffix!r} (want .png or .ppm)")


# -- resampling ----------------------------------------------------------------


def resize(img: ImageBuffer, h: int, w: int, method: str = "bilinear") -> ImageBuffer:
    """Resize to (h, w); bilinear shares the tensor ops' half-pixel centers."""
    if h < 1 or w < 1:
        raise ArgumentError(f"resize: target extents must be >= 1, got {h}x{w}")
    if method == "nearest":
        if (h, w) == (img.height, img.width):
            return img.copy()
        out = resize_nearest_nchw(img.to_nchw(), h, w)
    elif method == "bilinear":
        out = resize_bilinear_nchw(img.to_nchw(), h, w)
    else:
        raise ArgumentError(f"resize: unknown method {method!r}")
    return ImageBuffer.from_nchw(out, clamp=False)


def to_gray(img: ImageBuffer) -> ImageBuffer:
    """Rec.601 luminance; requires a 3-channel input."""
    if img.channels != 3:
        raise ShapeError(f"to_gray: need 3 channels, got {img.channels}")
    return ImageBuffer(gray_plane(img.data)[:, :, None])


def gray_plane(data: np.ndarray) -> np.ndarray:
    r, g, b = GRAY_WEIGHTS
    return (
        data[:, :, 0] * np.float32(r) + data[:, :, 1] * np.float32(g) + data[:, :, 2] * np.float32(b)
    )


def mean_gray(img: ImageBuffer) -> float:
    """Mean gray luminance, accumulated exactly (order-independent)."""
    plane = gray_plane(img.data) if img.channels == 3 else img.data[:, :, 0]
    return math.fsum(plane.reshape(-1).astype(np.float64)) / plane.size


# -- global filters --------------------------------------------------------------


def apply_filter(img: ImageBuffer, kind: str, p: float) -> ImageBuffer:
    """Apply one photometric adjustment; identity at p = 0 is bit-exact."""
    if kind not in FILTER_KINDS:
        raise ArgumentError(f"unknown filter kind {kind!r}, expected one of {FILTER_KINDS}")
    if not (-1.0 < p < 1.0):
        raise ArgumentError(f"filter parameter must lie in (-1, 1), got {p}")
    if p == 0.0:
        return img.copy()
    gain = np.float32(1.0 + p)
    if kind == "brightness":
        out = img.data * gain
    elif kind == "contrast":
        mu = np.float32(mean_gray(img))
        out = (img.data - mu) * gain + mu
    else:  # saturation
        if img.channels != 3:
            raise ShapeError("saturation filter needs a 3-channel image")
        g = gray_plane(img.data)[:, :, None]
        out = g + (img.data - g) * gain
    return ImageBuffer(np.clip(out, 0.0, 1.0))
