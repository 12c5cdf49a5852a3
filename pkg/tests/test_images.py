"""Image buffers, file formats, resampling, and the three global filters."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glpge.diffcore.resample import resize_bilinear_nchw
from glpge.errors import ArgumentError, FormatError, ShapeError
from glpge.images import (
    ImageBuffer,
    apply_filter,
    load_image,
    mean_gray,
    resize,
    save_image,
    to_gray,
)


def _rand_img(seed=0, shape=(12, 10, 3)):
    return ImageBuffer(np.random.default_rng(seed).random(shape, dtype=np.float32))


class TestFileIO:
    @pytest.mark.parametrize("suffix", [".png", ".ppm"])
    def test_roundtrip_within_quantization(self, tmp_path, suffix):
        img = _rand_img(3)
        path = tmp_path / f"img{suffix}"
        save_image(img, path)
        back = load_image(path)
        assert np.abs(back.data - img.data).max() <= 1 / 255 + 1e-6

    def test_white_ppm_loads_as_ones(self, tmp_path):
        path = tmp_path / "white.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + b"\xff" * 12)
        img = load_image(path)
        assert img.data.shape == (2, 2, 3)
        np.testing.assert_array_equal(img.data, 1.0)

    def test_gray_png_roundtrip(self, tmp_path):
        img = ImageBuffer(np.random.default_rng(0).random((8, 8, 1), dtype=np.float32))
        path = tmp_path / "gray.png"
        save_image(img, path)
        back = load_image(path)
        assert back.channels == 1
        assert np.abs(back.data - img.data).max() <= 1 / 255 + 1e-6

    def test_text_file_is_parse_error(self, tmp_path):
        path = tmp_path / "not_an_image.png"
        path.write_text("hello world, definitely not pixels")
        with pytest.raises(FormatError):
            load_image(path)

    def test_truncated_ppm_is_parse_error(self, tmp_path):
        path = tmp_path / "short.ppm"
        path.write_bytes(b"P6\n4 4\n255\n\x00\x01")
        with pytest.raises(FormatError):
            load_image(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_save_quantizes_by_rounding(self, tmp_path):
        img = ImageBuffer(np.full((1, 1, 3), 0.5, dtype=np.float32))
        path = tmp_path / "q.ppm"
        save_image(img, path)
        assert path.read_bytes().endswith(bytes([128, 128, 128]))


class TestResize:
    def test_nearest_same_size_identity(self):
        img = _rand_img(1)
        out = resize(img, img.height, img.width, "nearest")
        np.testing.assert_array_equal(out.data, img.data)

    def test_constant_stays_constant(self):
        img = ImageBuffer(np.full((6, 8, 3), 0.7, dtype=np.float32))
        out = resize(img, 17, 5, "bilinear")
        np.testing.assert_array_equal(out.data, np.full((17, 5, 3), np.float32(0.7)))

    def test_matches_core_interpolation(self):
        # 4x4 ramp downsampled to 2x2 equals the shared tensor-op resampler
        ramp = np.linspace(0, 1, 16, dtype=np.float32).reshape(4, 4, 1)
        img = ImageBuffer(ramp)
        out = resize(img, 2, 2, "bilinear")
        want = resize_bilinear_nchw(img.to_nchw(), 2, 2)
        np.testing.assert_allclose(out.data[:, :, 0], want[0, 0], atol=1e-6)

    def test_zero_extent_rejected(self):
        with pytest.raises(ArgumentError):
            resize(_rand_img(), 0, 4)


class TestToGray:
    def test_white_maps_to_one(self):
        img = ImageBuffer(np.ones((2, 2, 3), dtype=np.float32))
        np.testing.assert_allclose(to_gray(img).data, 1.0, rtol=1e-6)

    def test_pure_red_rec601(self):
        data = np.zeros((2, 2, 3), dtype=np.float32)
        data[:, :, 0] = 1.0
        assert to_gray(ImageBuffer(data)).data[0, 0, 0] == pytest.approx(0.299, abs=1e-6)

    def test_gray_input_unchanged(self):
        v = np.random.default_rng(2).random((3, 3, 1), dtype=np.float32)
        img = ImageBuffer(np.repeat(v, 3, axis=2))
        np.testing.assert_allclose(to_gray(img).data, v, atol=1e-6)

    def test_single_channel_rejected(self):
        with pytest.raises(ShapeError):
            to_gray(ImageBuffer(np.zeros((2, 2, 1), dtype=np.float32)))


class TestFilters:
    @pytest.mark.parametrize("kind", ["brightness", "contrast", "saturation"])
    def test_zero_parameter_is_bit_exact_identity(self, kind):
        img = _rand_img(4)
        out = apply_filter(img, kind, 0.0)
        np.testing.assert_array_equal(out.data, img.data)

    def test_saturation_minus_one_collapses_to_gray(self):
        img = _rand_img(5)
        out = apply_filter(img, "saturation", -1.0 + 1e-9)
        gray = to_gray(img).data
        np.testing.assert_allclose(out.data, np.repeat(gray, 3, axis=2), atol=1e-5)

    def test_brightness_point_value(self):
        img = ImageBuffer(np.full((2, 2, 3), 0.5, dtype=np.float32))
        out = apply_filter(img, "brightness", 0.2)
        np.testing.assert_allclose(out.data, 0.6, rtol=1e-6)

    def test_out_of_range_parameter(self):
        with pytest.raises(ArgumentError):
            apply_filter(_rand_img(), "brightness", 1.0)

    def test_unknown_kind(self):
        with pytest.raises(ArgumentError):
            apply_filter(_rand_img(), "gamma", 0.1)

    @given(st.floats(-0.95, 0.95))
    @settings(max_examples=25, deadline=None)
    def test_saturation_preserves_luminance(self, p):
        img = _rand_img(6, (8, 8, 3))
        # pre-clamp formula preserves gray exactly; measure where no clamping occurred
        g_in = to_gray(img).data
        gain = np.float32(1.0 + p)
        pre = g_in + (img.data - g_in) * gain
        if pre.min() < 0 or pre.max() > 1:
            return
        out = apply_filter(img, "saturation", p)
        np.testing.assert_allclose(to_gray(out).data, g_in, atol=2e-6)

    @given(st.floats(-0.9, 0.9))
    @settings(max_examples=25, deadline=None)
    def test_contrast_preserves_mean_luminance(self, p):
        img = ImageBuffer(0.25 + 0.5 * np.random.default_rng(8).random((8, 8, 3), dtype=np.float32))
        out = apply_filter(img, "contrast", p)
        assert mean_gray(out) == pytest.approx(mean_gray(img), abs=2e-6)

    def test_outputs_stay_in_range(self):
        img = _rand_img(9)
        for kind in ("brightness", "contrast", "saturation"):
            out = apply_filter(img, kind, 0.9)
            assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_brightness_monotone_in_p(self):
        img = ImageBuffer(np.full((4, 4, 3), 0.4, dtype=np.float32))
        values = [apply_filter(img, "brightness", p).data[0, 0, 0] for p in (-0.5, 0.0, 0.5)]
        assert values[0] < values[1] < values[2]

    def test_resolution_agnostic_commutes_with_nearest_upsampling(self):
        img = _rand_img(10, (64, 64, 3))
        big = resize(img, 256, 256, "nearest")
        for kind in ("brightness", "contrast", "saturation"):
            filtered_then_up = resize(apply_filter(img, kind, 0.3), 256, 256, "nearest")
            up_then_filtered = apply_filter(big, kind, 0.3)
            np.testing.assert_array_equal(filtered_then_up.data, up_then_filtered.data)

    def test_tensor_roundtrip_lossless(self):
        img = _rand_img(11)
        back = ImageBuffer.from_nchw(img.to_nchw(), clamp=False)
        np.testing.assert_array_equal(back.data, img.data)
