"""Global stage: structure, parameter prediction, fusion, full enhancement."""

import numpy as np
import pytest

from glpge.diffcore import Tensor, ops
from glpge.errors import ConfigError
from glpge.globalnet import (
    FUSION_STRATEGIES,
    GlobalNetConfig,
    GlobalParamNet,
    build_global_net,
    enhance_global,
    enhance_graph,
    fuse,
    predict_params,
)
from glpge.images import ImageBuffer, apply_filter, resize


def _zero_heads(model):
    for kind in model.heads:
        for layer in model.heads[kind]:
            layer.w.data[:] = 0
            layer.b.data[:] = 0


def _rand_img(seed=0, shape=(64, 64, 3)):
    return ImageBuffer(np.random.default_rng(seed).random(shape, dtype=np.float32))


class TestBuild:
    def test_seeded_build_deterministic(self):
        a = build_global_net(GlobalNetConfig(seed=9))
        b = build_global_net(GlobalNetConfig(seed=9))
        for (na, pa), (nb, pb) in zip(a.named_params().items(), b.named_params().items()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_registry_has_15_backbone_convs_plus_fusion(self):
        model = build_global_net()
        assert model.backbone_conv_count() == 15
        fusion = [i for i in model.registry if i.name == "fusion"]
        assert len(fusion) == 1 and fusion[0].k == 1

    def test_parameter_count_matches_closed_form(self):
        model = build_global_net()
        expected = sum(info.weight_count for info in model.registry)
        assert model.param_count() == expected

    def test_invalid_widths_rejected(self):
        with pytest.raises(ConfigError):
            build_global_net(GlobalNetConfig(stage_widths=(8, 0, 16, 16, 16)))

    def test_fusion_initialized_to_channel_group_average(self):
        model = build_global_net()
        w = model.fusion.w.data
        for c in range(3):
            np.testing.assert_allclose(w[c, c::3, 0, 0], 1.0 / 3.0, rtol=1e-6)
        assert np.count_nonzero(w) == 9
        np.testing.assert_array_equal(model.fusion.b.data, 0.0)


class TestPredictParams:
    def test_zero_heads_give_zero_params(self):
        model = build_global_net()
        _zero_heads(model)
        params = predict_params(model, _rand_img(1))
        assert params.as_tuple() == (0.0, 0.0, 0.0)

    def test_invariant_to_input_resolution(self):
        model = build_global_net()
        img = _rand_img(2, (512, 512, 3))
        side = model.config.input_side
        thumb = resize(img, side, side, "bilinear")
        assert predict_params(model, img) == predict_params(model, thumb)

    def test_outputs_strictly_inside_unit_interval(self):
        model = build_global_net()
        for seed in range(100):
            params = predict_params(model, _rand_img(seed, (48, 48, 3)))
            assert all(abs(p) < 1.0 for p in params.as_tuple())


class TestFuse:
    def test_concatenation_identity_on_identical_branches(self):
        model = build_global_net()
        img = _rand_img(3)
        out = fuse(model, [img, img, img], "concatenation")
        np.testing.assert_array_equal(out.data, img.data)

    def test_additive_identity_on_identical_branches(self):
        model = build_global_net()
        img = _rand_img(4)
        out = fuse(model, [img, img, img], "additive")
        np.testing.assert_array_equal(out.data, img.data)

    def test_cascading_identity_with_zero_params(self):
        model = build_global_net()
        _zero_heads(model)
        img = _rand_img(5)
        out = enhance_global(model, img, "cascading")
        np.testing.assert_array_equal(out.data, img.data)

    def test_unknown_strategy(self):
        model = build_global_net()
        with pytest.raises(ConfigError):
            fuse(model, [_rand_img()] * 3, "multiplicative")


class TestEnhanceGlobal:
    def test_zero_model_is_identity(self):
        model = build_global_net()
        _zero_heads(model)
        img = _rand_img(6)
        out = enhance_global(model, img, "concatenation")
        np.testing.assert_array_equal(out.data, img.data)

    @pytest.mark.parametrize("shape", [(96, 72, 3), (160, 224, 3)])
    def test_output_extent_matches_input(self, shape):
        model = build_global_net()
        out = enhance_global(model, _rand_img(7, shape))
        assert out.data.shape == shape

    def test_forced_params_additive_matches_closed_form(self):
        model = build_global_net()
        img = _rand_img(8)
        params = type(predict_params(model, img))(0.2, 0.0, 0.0)
        branches = [apply_filter(img, k, p) for k, p in
                    zip(("brightness", "contrast", "saturation"), params.as_tuple())]
        got = fuse(model, branches, "additive")
        want = np.clip(
            (np.clip(img.data * np.float32(1.2), 0, 1).astype(np.float64)
             + img.data.astype(np.float64) * 2) / 3.0, 0, 1).astype(np.float32)
        np.testing.assert_allclose(got.data, want, atol=1e-6)

    @pytest.mark.parametrize("strategy", FUSION_STRATEGIES)
    def test_strategies_run(self, strategy):
        model = build_global_net()
        out = enhance_global(model, _rand_img(9), strategy)
        assert out.data.shape == (64, 64, 3)
        assert out.data.min() >= 0 and out.data.max() <= 1


class TestGradientFlow:
    def test_concatenation_reaches_all_three_heads(self):
        model = GlobalParamNet(GlobalNetConfig.micro())
        rng = np.random.default_rng(10)
        x = Tensor(rng.random((2, 3, 24, 24), dtype=np.float32))
        thumb = Tensor(rng.random((2, 3, 16, 16), dtype=np.float32))
        target = Tensor(rng.random((2, 3, 24, 24), dtype=np.float32))
        out = enhance_graph(model, x, thumb, "concatenation")
        diff = ops.sub(out, target)
        loss = ops.mean(ops.mul(diff, diff))
        for p in model.params():
            p.zero_grad()
        loss.backward()
        for kind, (fc0, fc1) in model.heads.items():
            assert fc1.w.grad is not None and np.abs(fc1.w.grad).max() > 0, kind

    def test_backbone_flops_independent_of_image_size(self):
        from glpge.evalkit import count_flops

        model = build_global_net()
        sizes = [count_flops(model, s, s).branch_total("backbone") for s in (256, 512, 2048)]
        assert sizes[0] == sizes[1] == sizes[2]

    def test_fullres_work_scales_linearly_in_pixels(self):
        from glpge.evalkit import count_flops

        model = build_global_net()
        f1 = count_flops(model, 128, 128)
        f2 = count_flops(model, 256, 256)
        assert f2.branch_total("fusion") == 4 * f1.branch_total("fusion")
        assert f2.total - f2.branch_total("backbone") == 4 * (f1.total - f1.branch_total("backbone"))
