"""Seeded synthetic documents and the multi-stage degradation pipeline.

Rendering draws near-white pages with rows of dark text-like strokes,
occasional heading bars, and a colored accent block. Degradation applies
up to six stages in a fixed order (shadow, wrinkle shading, color cast,
bleed-through, blur, noise); each enabled stage draws its own strength in
[0.5 * intensity, intensity] per sample.

All randomness comes from Philox counter-based generators keyed on
(seed, index, purpose) so corpora can be regenerated bit for bit and
samples can be produced in any order or in parallel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .diffcore.resample import resize_bilinear_nchw
from .errors import ArgumentError, ConfigError
from .images import ImageBuffer, save_image
from .layers import make_rng

STAGE_ORDER = ("shadow", "wrinkle_shading", "color_cast", "bleed_through", "blur", "noise")

_RENDER_TAG = 0x9E4D
_DEGRADE_TAG = 0xDE64
_SAMPLE_TAG = 0x5A3B

SHADOW_DEPTH = 0.6
BLUR_SIGMA_SCALE = 2.0
NOISE_SIGMA_SCALE = 0.08
COLOR_CAST_SPAN = 0.25
BLEED_WEIGHT = 0.3
BLEED_BLUR_SIGMA = 1.0
WRINKLE_AMPLITUDE = 0.15


@dataclass
class DegradeConfig:
    """Intensity in [0,1], a 64-bit seed, and per-stage enable toggles."""

    intensity: float = 0.5
    seed: int = 0
    shadow: bool = True
    blur: bool = True
    noise: bool = True
    color_cast: bool = True
    bleed_through: bool = True
    wrinkle_shading: bool = True

    def enabled(self, kind: str) -> bool:
        return bool(getattr(self, kind))


# -- rendering -------------------------------------------------------------------


def render_document(seed: int, h: int, w: int) -> ImageBuffer:
    """Deterministic text-like page: bright background, dark stroke rows."""
    if h < 64 or w < 64:
        raise ArgumentError(f"render_document: extents must be >= 64, got {h}x{w}")
    rng = make_rng(seed, _RENDER_TAG)
    base = rng.uniform(0.93, 0.98)
    page = np.full((h, w, 3), base, dtype=np.float32)
    page += rng.normal(0.0, 0.004, size=(h, w, 1)).astype(np.float32)

    margin_x = max(2, int(w * 0.08))
    margin_y = max(2, int(h * 0.07))
    line_h = max(2, h // 36)
    leading = max(line_h + 3, int(line_h * 3.6))

    if rng.uniform() < 0.5:  # heading bar
        bar_h = min(2 * line_h, h // 12)
        x0 = margin_x
        x1 = x0 + int((w - 2 * margin_x) * rng.uniform(0.25, 0.55))
        page[margin_y : margin_y + bar_h, x0:x1] = rng.uniform(0.05, 0.2)
        y = margin_y + bar_h + leading
    else:
        y = margin_y

    first_line = True
    while y + line_h < h - margin_y:
        if not first_line and rng.uniform() < 0.2:  # paragraph break
            y += leading
            continue
        x = margin_x + int(rng.uniform(0, 0.05) * w)
        right = w - margin_x
        ink = rng.uniform(0.05, 0.25)
        while x < right - 2:
            word = int(rng.uniform(0.02, 0.07) * w) + 1
            word = min(word, right - x)
            page[y : y + line_h, x : x + word] = ink + rng.uniform(-0.03, 0.03)
            x += word + max(1, int(rng.uniform(0.015, 0.05) * w))
        first_line = False
        y += leading

    if rng.uniform() < 0.4:  # colored accent block
        bh = int(h * rng.uniform(0.04, 0.09))
        bw = int(w * rng.uniform(0.1, 0.25))
        y0 = int(rng.uniform(0.1, 0.8) * (h - bh))
        x0 = int(rng.uniform(0.1, 0.8) * (w - bw))
        color = np.array([rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9), rng.uniform(0.4, 0.9)], dtype=np.float32)
        color[rng.integers(0, 3)] = rng.uniform(0.2, 0.4)
        page[y0 : y0 + bh, x0 : x0 + bw] = 0.35 * page[y0 : y0 + bh, x0 : x0 + bw] + 0.65 * color
    return ImageBuffer(np.clip(page, 0.0, 1.0))


# -- degradation stages -------------------------------------------------------------


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return (k / k.sum()).astype(np.float32)


def _gauss_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian with reflective padding (mean-preserving)."""
    if sigma <= 0:
        return data.copy()
    k = _gauss_kernel(sigma)
    r = len(k) // 2
    out = data
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for t, weight in enumerate(k):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(t, t + out.shape[axis])
            acc += weight * padded[tuple(sl)]
        out = acc
    return out


def _smooth_field(rng, h: int, w: int, cells: int = 4) -> np.ndarray:
    """Low-frequency field in [0,1]: a coarse random grid upsampled bilinearly."""
    gh = max(2, h // 128) + cells
    gw = max(2, w // 128) + cells
    grid = rng.uniform(0.0, 1.0, size=(gh, gw)).astype(np.float32)
    return resize_bilinear_nchw(grid[None, None], h, w)[0, 0]


def degrade_stage(img: ImageBuffer, kind: str, strength: float, rng) -> ImageBuffer:
    """Apply one degradation at the given strength; strength 0 is identity."""
    if kind not in STAGE_ORDER:
        raise ConfigError(f"unknown degradation stage {kind!r}")
    if not (0.0 <= strength <= 1.0):
        raise ArgumentError(f"stage strength must be in [0,1], got {strength}")
    if strength == 0.0:
        return img.copy()
    data = img.data
    h, w = img.height, img.width
    if kind == "shadow":
        field = _smooth_field(rng, h, w)
        out = data * (1.0 - np.float32(SHADOW_DEPTH * strength) * field)[:, :, None]
    elif kind == "wrinkle_shading":
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
        scale = min(h, w)
        ripple = np.zeros((h, w), dtype=np.float32)
        shares = rng.dirichlet(np.ones(3)).astype(np.float32)
        for share in shares:
            theta = rng.uniform(0, np.pi)
            freq = rng.uniform(1.5, 4.0) / scale
            phase = rng.uniform(0, 2 * np.pi)
            ripple += share * np.sin(
                2 * np.pi * freq * (np.cos(theta) * xs + np.sin(theta) * ys) + phase
            ).astype(np.float32)
        out = data + (WRINKLE_AMPLITUDE * strength) * ripple[:, :, None]
    elif kind == "color_cast":
        span = COLOR_CAST_SPAN * strength
        gains = rng.uniform(1.0 - span, 1.0 + span, size=3).astype(np.float32)
        out = data * gains
    elif kind == "bleed_through":
        ghost = _gauss_blur(data[:, ::-1, :], BLEED_BLUR_SIGMA)
        weight = np.float32(BLEED_WEIGHT * strength)
        out = (1.0 - weight) * data + weight * ghost
    elif kind == "blur":
        out = _gauss_blur(data, BLUR_SIGMA_SCALE * strength)
    else:  # noise
        out = data + rng.normal(0.0, NOISE_SIGMA_SCALE * strength, size=data.shape).astype(np.float32)
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def degrade(img: ImageBuffer, cfg: DegradeConfig) -> ImageBuffer:
    """Run the enabled stages in fixed order with per-sample strengths."""
    rng = make_rng(cfg.seed, _DEGRADE_TAG)
    out = img
    for kind in STAGE_ORDER:
        if not cfg.enabled(kind):
            continue
        strength = rng.uniform(0.5 * cfg.intensity, cfg.intensity)
        out = degrade_stage(out, kind, strength, rng)
    return out.copy() if out is img else out


# -- corpus ------------------------------------------------------------------------


@dataclass
class DatasetManifest:
    path: Path
    rows: list = field(default_factory=list)


MANIFEST_FIELDS = ("degraded", "clean", "seed", "intensity", "width", "height")


def load_manifest(path) -> list[dict]:
    """Read a manifest CSV; degraded/clean paths resolve next to the file."""
    path = Path(path)
    base = path.parent
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(MANIFEST_FIELDS):
            raise ConfigError(f"manifest header {reader.fieldnames} != {list(MANIFEST_FIELDS)}")
        for row in reader:
            row = dict(row)
            row["degraded"] = str(base / row["degraded"])
            row["clean"] = str(base / row["clean"])
            row["seed"] = int(row["seed"])
            row["intensity"] = float(row["intensity"])
            row["width"] = int(row["width"])
            row["height"] = int(row["height"])
            rows.append(row)
    return rows


def build_dataset(n: int, out_dir, size=(128, 128), intensity_range=(0.5, 0.5),
                  root_seed: int = 0, base_config: DegradeConfig | None = None) -> DatasetManifest:
    """Write n (degraded, clean) PNG pairs plus manifest.csv into out_dir.

    Per-sample seeds derive deterministically from (root_seed, index), so a
    rebuild with the same arguments is bit-identical and samples could be
    generated in parallel without changing the result.
    """
    if n < 1:
        raise ArgumentError(f"build_dataset: n must be >= 1, got {n}")
    h, w = (size, size) if isinstance(size, int) else size
    lo, hi = intensity_range
    if not (0.0 <= lo <= hi <= 1.0):
        raise ArgumentError(f"intensity range must satisfy 0 <= lo <= hi <= 1, got {intensity_range}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    template = base_config or DegradeConfig()

    manifest = DatasetManifest(path=out_dir / "manifest.csv")
    for i in range(n):
        sample_rng = make_rng(root_seed, i, _SAMPLE_TAG)
        sample_seed = int(sample_rng.integers(0, 2**63 - 1))
        intensity = float(sample_rng.uniform(lo, hi))
        clean = render_document(sample_seed, h, w)
        degraded = degrade(clean, replace(template, intensity=intensity, seed=sample_seed))
        clean_name = f"clean_{i:05d}.png"
        degraded_name = f"degraded_{i:05d}.png"
        save_image(clean, out_dir / clean_name)
        save_image(degraded, out_dir / degraded_name)
        manifest.rows.append(
            {
                "degraded": degraded_name,
                "clean": clean_name,
                "seed": sample_seed,
                "intensity": intensity,
                "width": w,
                "height": h,
            }
        )
    with open(manifest.path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(MANIFEST_FIELDS))
        writer.writeheader()
        for row in manifest.rows:
            writer.writerow({**row, "intensity": f"{row['intensity']:.6f}"})
    return manifest
