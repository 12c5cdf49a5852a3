"""Quality metrics, frequency diagnostics, and analytic FLOP accounting.

Conventions (documented so independent reimplementations can agree):

* PSNR is 10*log10(1/MSE) on unit dynamic range, capped at the 99.0 dB
  sentinel exactly when MSE < 1e-9.
* SSIM reuses the loss-side implementation (11x11 Gaussian window,
  sigma 1.5, per-channel average), so metric and objective agree.
* One multiply-accumulate counts as 2 FLOPs; elementwise and resampling
  work counts 1 op per output element. All totals are exact integers.
* Spectral bands split at half-Nyquist (0.25 cycles/px): "horizontal
  frequency" energy varies along the width axis.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import no_grad
from .diffcore.tensor import Tensor
from .errors import ShapeError
from .images import ImageBuffer, gray_plane, load_image
from .losses import ssim_index

PSNR_CAP = 99.0
PSNR_CAP_MSE = 1e-9
HALF_NYQUIST = 0.25


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs hit the 99 dB cap."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"psnr: shapes differ, {a.data.shape} vs {b.data.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse < PSNR_CAP_MSE:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Structural similarity between two image buffers (same code as the loss)."""
    with no_grad():
        value = ssim_index(Tensor(a.to_nchw()), Tensor(b.to_nchw()))
    return value.item()


# -- paired evaluation -----------------------------------------------------------


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)  # dicts: degraded, clean, ssim, psnr
    mean_ssim: float = 0.0
    median_ssim: float = 0.0
    mean_psnr: float = 0.0
    median_psnr: float = 0.0

    def to_json(self) -> str:
        payload = {
            "rows": self.rows,
            "summary": {
                "count": len(self.rows),
                "mean_ssim": self.mean_ssim,
                "median_ssim": self.median_ssim,
                "mean_psnr": self.mean_psnr,
                "median_psnr": self.median_psnr,
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["degraded", "clean", "ssim", "psnr"])
            for row in self.rows:
                writer.writerow([row["degraded"], row["clean"], f"{row['ssim']:.6f}", f"{row['psnr']:.4f}"])
            writer.writerow([])
            writer.writerow(["summary", "count", len(self.rows), ""])
            writer.writerow(["summary", "mean_ssim", f"{self.mean_ssim:.6f}", ""])
            writer.writerow(["summary", "median_ssim", f"{self.median_ssim:.6f}", ""])
            writer.writerow(["summary", "mean_psnr", f"{self.mean_psnr:.4f}", ""])
            writer.writerow(["summary", "median_psnr", f"{self.median_psnr:.4f}", ""])


def evaluate_pairs(manifest_rows, enhancer) -> MetricReport:
    """Run ``enhancer`` over every (degraded, clean) pair and aggregate.

    ``manifest_rows`` is an iterable of dicts with at least ``degraded`` and
    ``clean`` path fields (see synthdoc.load_manifest). Aggregation uses
    exact summation, so row order does not change the result.
    """
    report = MetricReport()
    for row in manifest_rows:
        for key in ("degraded", "clean"):
            if not Path(row[key]).exists():
                raise FileNotFoundError(f"manifest row references missing file: {row[key]}")
        degraded = load_image(row["degraded"])
        clean = load_image(row["clean"])
        output = enhancer(degraded)
        report.rows.append(
            {
                "degraded": str(row["degraded"]),
                "clean": str(row["clean"]),
                "ssim": ssim(output, clean),
                "psnr": psnr(output, clean),
            }
        )
    if report.rows:
        ssims = [r["ssim"] for r in report.rows]
        psnrs = [r["psnr"] for r in report.rows]
        report.mean_ssim = math.fsum(ssims) / len(ssims)
        report.mean_psnr = math.fsum(psnrs) / len(psnrs)
        report.median_ssim = float(np.median(ssims))
        report.median_psnr = float(np.median(psnrs))
    return report


# -- frequency diagnostics ----------------------------------------------------------


@dataclass(frozen=True)
class SpectralProfile:
    dc_fraction: float
    horiz_band_energy: float
    vert_band_energy: float
    high_freq_fraction: float
    total_energy: float


def spectral_profile(img: ImageBuffer) -> SpectralProfile:
    """Energy split of the 2-D Fourier spectrum of the gray image.

    Fractions of total spectral energy: the DC bin, axis-aligned bands with
    |f| >= 0.25 cycles/px along width (horizontal detail) or height, and the
    annulus with radial frequency >= 0.25.
    """
    plane = gray_plane(img.data) if img.channels == 3 else img.data[:, :, 0]
    plane = plane.astype(np.float64)
    spec = np.abs(np.fft.fft2(plane)) ** 2
    total = float(spec.sum())
    fy = np.abs(np.fft.fftfreq(plane.shape[0]))[:, None]
    fx = np.abs(np.fft.fftfreq(plane.shape[1]))[None, :]
    horiz = float(spec[np.broadcast_to(fx >= HALF_NYQUIST, spec.shape)].sum())
    vert = float(spec[np.broadcast_to(fy >= HALF_NYQUIST, spec.shape)].sum())
    radial = np.sqrt(fx**2 + fy**2) >= HALF_NYQUIST
    high = float(spec[radial].sum())
    return SpectralProfile(
        dc_fraction=float(spec[0, 0]) / total,
        horiz_band_energy=horiz / total,
        vert_band_energy=vert / total,
        high_freq_fraction=high / total,
        total_energy=total,
    )


# -- FLOP accounting ------------------------------------------------------------------


@dataclass
class FlopBreakdown:
    per_layer: list  # (branch, name, kind, flops)
    branches: dict
    total: int

    def conv_total(self, branch: str | None = None) -> int:
        return sum(
            f for (b, _, kind, f) in self.per_layer if kind == "conv" and (branch is None or b == branch)
        )

    def branch_total(self, branch: str) -> int:
        return self.branches.get(branch, 0)


def count_flops(model, h: int, w: int, **kwargs) -> FlopBreakdown:
    """Analytic FLOPs of one forward pass of ``model`` on an h x w image.

    The model supplies its own exact plan via ``flop_plan``; this wrapper
    aggregates per-branch subtotals and checks they sum to the grand total.
    """
    rows = model.flop_plan(h, w, **kwargs)
    branches: dict = {}
    total = 0
    for branch, _, _, flops in rows:
        branches[branch] = branches.get(branch, 0) + int(flops)
        total += int(flops)
    assert total == sum(branches.values())
    return FlopBreakdown(per_layer=rows, branches=branches, total=total)
