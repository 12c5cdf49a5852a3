"""Local stage: dual-branch structure, coefficient maps, fast-path scaling."""

import numpy as np
import pytest

from glpge.diffcore import Tensor, ops
from glpge.errors import ConfigError, ShapeError
from glpge.evalkit import count_flops
from glpge.images import ImageBuffer
from glpge.refinenet import (
    LocalRefineNet,
    RefineNetConfig,
    build_refine_net,
    coeff_branch,
    direct_predict,
    enhance_local,
    refine_graph,
    smooth_branch,
)


def _rand_img(seed=0, shape=(64, 64, 3)):
    return ImageBuffer(np.random.default_rng(seed).random(shape, dtype=np.float32))


@pytest.fixture(scope="module")
def default_net():
    return build_refine_net()


@pytest.fixture(scope="module")
def small_net():
    return build_refine_net(RefineNetConfig(widths=(4, 6, 8, 12), growths=(2, 2, 3, 4),
                                            block_layers=(1, 1, 2, 2), smooth_widths=(4, 4)))


class TestBuild:
    def test_default_parameter_count_in_band(self, default_net):
        assert 3.4e6 <= default_net.param_count() <= 4.7e6

    def test_bias_initialized_heads_give_identity_maps(self, small_net):
        maps = coeff_branch(small_net, _rand_img(0), 1)
        np.testing.assert_array_equal(maps.gain, 1.0)
        np.testing.assert_array_equal(maps.offset, 0.0)

    def test_heads_share_the_same_feature_tensor(self, small_net):
        # both 1x1 heads consume the finest grid node: same input width
        infos = {i.name: i for i in small_net.registry}
        assert infos["head.gain"].cin == infos["head.offset"].cin == small_net.config.widths[0]

    def test_seeded_build_deterministic(self):
        cfg = RefineNetConfig(widths=(4, 6, 8, 12), growths=(2, 2, 3, 4),
                              block_layers=(1, 1, 2, 2), smooth_widths=(4, 4), seed=3)
        a, b = build_refine_net(cfg), build_refine_net(cfg)
        for pa, pb in zip(a.params(), b.params()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_micro_config_builds(self):
        model = build_refine_net(RefineNetConfig.micro())
        assert model.param_count() > 0

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            build_refine_net(RefineNetConfig(widths=(4, 6, 8)))

    def test_no_normalization_layers_anywhere(self, default_net):
        kinds = {info.kind for info in default_net.registry}
        assert kinds == {"conv"}
        assert not any("norm" in info.name.lower() for info in default_net.registry)

    def test_dense_block_channel_wiring(self, default_net):
        # conv l of a dense block consumes block input + l prior growth maps
        cfg = default_net.config
        infos = {i.name: i for i in default_net.registry}
        for (i, j), node in default_net.nodes.items():
            cin = default_net.node_input_channels(i, j, 12)
            g, layers = cfg.growths[i], cfg.block_layers[i]
            for layer in range(layers):
                info = infos[f"grid.node{i}{j}.dense{layer}"]
                assert info.cin == cin + layer * g and info.cout == g
            trans = infos[f"grid.node{i}{j}.trans"]
            assert trans.cin == cin + layers * g and trans.cout == cfg.widths[i]


class TestSmoothBranch:
    def test_bias_only_network_outputs_constant(self, small_net):
        saved = small_net.state()
        for conv in small_net.smooth_convs:
            conv.w.data[:] = 0
            conv.b.data[:] = 0
        small_net.smooth_convs[2].b.data[:] = 0.5
        out = smooth_branch(small_net, _rand_img(1))
        np.testing.assert_allclose(out.data, 0.5, atol=1e-7)
        small_net.load_state(saved)

    @pytest.mark.parametrize("shape", [(64, 64, 3), (47, 53, 3)])
    def test_output_extent_matches_input(self, small_net, shape):
        out = smooth_branch(small_net, _rand_img(2, shape))
        assert out.data.shape == shape

    def test_receptive_field_is_7x7(self, small_net):
        base = _rand_img(3, (32, 32, 3))
        poked = base.copy()
        poked.data[16, 16, :] = 1.0 - poked.data[16, 16, :]
        a = smooth_branch(small_net, base).data
        b = smooth_branch(small_net, poked).data
        changed = np.argwhere(np.any(a != b, axis=2))
        assert changed.size > 0
        assert changed[:, 0].min() >= 13 and changed[:, 0].max() <= 19
        assert changed[:, 1].min() >= 13 and changed[:, 1].max() <= 19


class TestCoeffBranch:
    @pytest.mark.parametrize("k", [1, 2])
    def test_maps_cover_full_resolution(self, small_net, k):
        img = _rand_img(4, (64, 96, 3))
        maps = coeff_branch(small_net, img, k)
        assert maps.gain.shape == (64, 96, 3)
        assert maps.offset.shape == (64, 96, 3)

    def test_identity_maps_survive_any_k(self, small_net):
        for k in (1, 2):
            maps = coeff_branch(small_net, _rand_img(5, (96, 96, 3)), k)
            np.testing.assert_array_equal(maps.gain, 1.0)
            np.testing.assert_array_equal(maps.offset, 0.0)

    def test_divisibility_enforced(self, small_net):
        with pytest.raises(ShapeError):
            coeff_branch(small_net, _rand_img(6, (60, 64, 3)), 1)
        with pytest.raises(ShapeError):
            coeff_branch(small_net, _rand_img(6, (64, 48, 3)), 2)


class TestEnhanceLocal:
    def test_identity_configuration_reduces_to_smooth(self, small_net):
        img = _rand_img(7)
        out = enhance_local(small_net, img, 1)
        smoothed = smooth_branch(small_net, img)
        np.testing.assert_array_equal(out.data, smoothed.data)

    def test_offset_only_stub(self, small_net):
        saved = small_net.state()
        small_net.head_gain.b.data[:] = 0.0
        small_net.head_offset.b.data[:] = 0.3
        out = enhance_local(small_net, _rand_img(8), 1)
        np.testing.assert_allclose(out.data, 0.3, atol=1e-6)
        small_net.load_state(saved)

    def test_affine_linearity_of_maps(self, small_net):
        img = _rand_img(9)
        smoothed = smooth_branch(small_net, img).data
        maps = coeff_branch(small_net, img, 1)
        pre1 = maps.gain * smoothed + maps.offset
        pre2 = (2 * maps.gain) * smoothed + (2 * maps.offset)
        np.testing.assert_allclose(pre2, 2 * pre1, rtol=1e-5)

    def test_bypass_smooth_identity_is_bit_exact(self, small_net):
        img = _rand_img(10)
        out = enhance_local(small_net, img, 1, bypass_smooth=True)
        np.testing.assert_array_equal(out.data, img.data)


class TestDirectMode:
    def test_output_extent(self, small_net):
        out = direct_predict(small_net, _rand_img(11, (64, 80, 3)), 1)
        assert out.data.shape == (64, 80, 3)

    def test_zero_head_gives_black(self, small_net):
        saved = small_net.state()
        small_net.head_direct.w.data[:] = 0
        small_net.head_direct.b.data[:] = 0
        out = direct_predict(small_net, _rand_img(12), 1)
        np.testing.assert_array_equal(out.data, 0.0)
        small_net.load_state(saved)


class TestGradientsAndFlops:
    def test_loss_reaches_both_branches(self, small_net):
        x = Tensor(np.random.default_rng(13).random((1, 3, 32, 32), dtype=np.float32))
        out, gain, offset, smoothed = refine_graph(small_net, x, 1)
        loss = ops.mean(ops.mul(out, out))
        for p in small_net.params():
            p.zero_grad()
        loss.backward()
        smooth_grads = sum(np.abs(c.w.grad).max() for c in small_net.smooth_convs if c.w.grad is not None)
        # the coefficient branch's trainable surface at init is its heads
        # (zero-initialized head weights gate gradient into the grid until
        # the first update moves them)
        coeff_grads = sum(
            np.abs(p.grad).max()
            for name, p in small_net.named_params().items()
            if name.startswith(("grid.", "head.gain", "head.offset")) and p.grad is not None
        )
        assert smooth_grads > 0
        assert coeff_grads > 0

    def test_grid_receives_gradient_once_heads_move(self, small_net):
        saved = small_net.state()
        rng = np.random.default_rng(14)
        small_net.head_gain.w.data[:] = rng.standard_normal(small_net.head_gain.w.shape).astype(np.float32) * 0.1
        x = Tensor(rng.random((1, 3, 32, 32), dtype=np.float32))
        out, *_ = refine_graph(small_net, x, 1)
        for p in small_net.params():
            p.zero_grad()
        ops.mean(ops.mul(out, out)).backward()
        grid_grads = sum(
            np.abs(p.grad).max()
            for name, p in small_net.named_params().items()
            if name.startswith("grid.") and p.grad is not None
        )
        assert grid_grads > 0
        small_net.load_state(saved)

    def test_coeff_conv_flops_scale_exactly_with_k(self, default_net):
        f1 = count_flops(default_net, 512, 512, k=1)
        f2 = count_flops(default_net, 512, 512, k=2)
        assert f2.conv_total("coeff") * 4 == f1.conv_total("coeff")

    def test_default_flops_in_band_at_512(self, default_net):
        total = count_flops(default_net, 512, 512, k=1).total
        assert 5.7e9 <= total <= 10.6e9

    def test_branch_totals_sum_to_grand_total(self, default_net):
        bd = count_flops(default_net, 256, 256, k=1)
        assert sum(bd.branches.values()) == bd.total
        assert all(isinstance(v, int) for v in bd.branches.values())
