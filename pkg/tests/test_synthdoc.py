"""Synthetic corpus: rendering bounds, stage semantics, determinism."""

import hashlib

import numpy as np
import pytest

from glpge.errors import ArgumentError, ConfigError
from glpge.evalkit import ssim
from glpge.images import to_gray
from glpge.layers import make_rng
from glpge.synthdoc import (
    STAGE_ORDER,
    DegradeConfig,
    build_dataset,
    degrade,
    degrade_stage,
    load_manifest,
    render_document,
)


class TestRender:
    def test_seeded_determinism(self):
        a = render_document(42, 96, 128)
        b = render_document(42, 96, 128)
        np.testing.assert_array_equal(a.data, b.data)

    def test_luminance_bounds_over_many_seeds(self):
        for seed in range(100):
            img = render_document(seed, 96, 96)
            assert to_gray(img).data.mean() > 0.8, f"seed {seed} too dark"
            assert img.data.min() < 0.3, f"seed {seed} has no ink"

    def test_different_seeds_differ(self):
        images = [render_document(seed, 64, 64).data.tobytes() for seed in range(100)]
        assert len(set(images)) == 100

    def test_undersized_rejected(self):
        with pytest.raises(ArgumentError):
            render_document(0, 32, 128)


class TestStages:
    @pytest.mark.parametrize("kind", STAGE_ORDER)
    def test_zero_strength_is_bit_identical(self, kind):
        img = render_document(1, 64, 64)
        out = degrade_stage(img, kind, 0.0, make_rng(0))
        np.testing.assert_array_equal(out.data, img.data)

    def test_shadow_only_darkens(self):
        img = render_document(2, 64, 64)
        out = degrade_stage(img, "shadow", 0.8, make_rng(1))
        assert (out.data <= img.data + 1e-7).all()

    def test_blur_preserves_mean(self):
        img = render_document(3, 96, 96)
        out = degrade_stage(img, "blur", 1.0, make_rng(2))
        assert abs(float(out.data.mean()) - float(img.data.mean())) < 1e-3

    def test_outputs_in_range(self):
        img = render_document(4, 64, 64)
        for kind in STAGE_ORDER:
            out = degrade_stage(img, kind, 1.0, make_rng(3))
            assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            degrade_stage(render_document(5, 64, 64), "vignette", 0.5, make_rng(0))

    def test_strength_out_of_range(self):
        with pytest.raises(ArgumentError):
            degrade_stage(render_document(5, 64, 64), "blur", 1.5, make_rng(0))


class TestDegrade:
    def test_zero_intensity_identity(self):
        img = render_document(6, 64, 64)
        out = degrade(img, DegradeConfig(intensity=0.0, seed=6))
        np.testing.assert_array_equal(out.data, img.data)

    def test_deterministic(self):
        img = render_document(7, 64, 64)
        cfg = DegradeConfig(intensity=0.6, seed=7)
        np.testing.assert_array_equal(degrade(img, cfg).data, degrade(img, cfg).data)

    def test_ssim_strictly_decreasing_in_intensity(self):
        img = render_document(8, 128, 128)
        values = [ssim(degrade(img, DegradeConfig(intensity=i, seed=8)), img) for i in (0.2, 0.5, 0.8)]
        assert values[0] > values[1] > values[2]

    def test_median_monotone_over_seeds(self):
        medians = []
        for intensity in (0.2, 0.5, 0.8):
            vals = []
            for seed in range(20):
                clean = render_document(seed, 96, 96)
                vals.append(ssim(degrade(clean, DegradeConfig(intensity=intensity, seed=seed)), clean))
            medians.append(np.median(vals))
        assert medians[0] > medians[1] > medians[2]

    def test_toggles_disable_stages(self):
        img = render_document(9, 64, 64)
        cfg = DegradeConfig(intensity=0.8, seed=9, shadow=False, blur=False, noise=False,
                            color_cast=False, bleed_through=False, wrinkle_shading=False)
        np.testing.assert_array_equal(degrade(img, cfg).data, img.data)


class TestDataset:
    def test_build_writes_pairs_and_manifest(self, tmp_path):
        manifest = build_dataset(4, tmp_path / "d", size=(64, 64), intensity_range=(0.3, 0.7), root_seed=1)
        rows = load_manifest(manifest.path)
        assert len(rows) == 4
        files = sorted(p.name for p in (tmp_path / "d").glob("*.png"))
        assert len(files) == 8
        for row in rows:
            assert row["width"] == 64 and row["height"] == 64
            assert 0.3 <= row["intensity"] <= 0.7

    def test_rebuild_bit_identical(self, tmp_path):
        hashes = []
        for name in ("a", "b"):
            build_dataset(3, tmp_path / name, size=(64, 64), intensity_range=(0.5, 0.5), root_seed=4)
            digest = hashlib.sha256()
            for p in sorted((tmp_path / name).glob("*")):
                digest.update(p.name.encode())
                digest.update(p.read_bytes())
            hashes.append(digest.hexdigest())
        assert hashes[0] == hashes[1]

    def test_n_must_be_positive(self, tmp_path):
        with pytest.raises(ArgumentError):
            build_dataset(0, tmp_path)

    def test_manifest_header_validated(self, tmp_path):
        bad = tmp_path / "m.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(ConfigError):
            load_manifest(bad)
