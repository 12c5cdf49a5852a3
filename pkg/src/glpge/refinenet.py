"""Local stage: a smoothing branch plus a coefficient branch that predicts
per-pixel gain/offset maps, combined as ``clamp(gain * smooth + offset)``.

The coefficient branch pixel-unshuffles the input (factor 2), runs a nested
U-Net whose nodes are dense blocks (each conv consumes the concatenation of
the block input and all previous layer outputs; no normalization layers
anywhere), and maps the finest node's features to 3-channel gain and offset
maps through 1x1 heads. Maps are produced at 1/(2k) of the input resolution
and bilinearly upsampled back, which is also the fast high-resolution path:
raising k shrinks every interior activation by k^2 while the full-image
affine application stays at native resolution.

Head weights start at zero with gain bias 1 and offset bias 0, so an
untrained model reduces to its smoothing branch exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import no_grad, ops
from .diffcore.tensor import Tensor
from .errors import ArgumentError, ConfigError, ShapeError
from .images import ImageBuffer
from .layers import Conv2dLayer, ParamModel, make_rng

UNSHUFFLE_FACTOR = 2
GRID_DEPTH = 4  # node grid (i, j) with i + j <= GRID_DEPTH - 1


@dataclass
class CoefficientMaps:
    """Full-resolution per-pixel, per-channel gain and offset (H, W, 3)."""

    gain: np.ndarray
    offset: np.ndarray


@dataclass
class RefineNetConfig:
    widths: tuple = (8, 16, 32, 256)
    growths: tuple = (2, 6, 12, 236)
    block_layers: tuple = (1, 2, 3, 4)
    smooth_widths: tuple = (16, 16)
    leaky_slope: float = 0.2
    seed: int = 0

    @classmethod
    def micro(cls) -> "RefineNetConfig":
        """Tiny variant for gradient checks on 16 px inputs."""
        return cls(widths=(4, 6, 8, 10), growths=(2, 2, 2, 4), block_layers=(1, 1, 1, 1),
                   smooth_widths=(4, 4))

    def validate(self):
        for name, seq in (("widths", self.widths), ("growths", self.growths),
                          ("block_layers", self.block_layers)):
            if len(seq) != GRID_DEPTH or any(int(v) < 1 for v in seq):
                raise ConfigError(f"{name} must be {GRID_DEPTH} positive ints, got {seq}")
        if len(self.smooth_widths) != 2 or any(int(v) < 1 for v in self.smooth_widths):
            raise ConfigError(f"smooth_widths must be 2 positive ints, got {self.smooth_widths}")


class DenseBlockModule:
    """L growth-rate convs with dense concatenation, then a 1x1 transition."""

    def __init__(self, rng, registry, name, cin, width, growth, layers, dtype):
        self.convs = []
        for layer in range(layers):
            self.convs.append(
                Conv2dLayer(rng, registry, f"{name}.dense{layer}", cin + layer * growth, growth, 3, 1, 1, dtype)
            )
        self.transition = Conv2dLayer(rng, registry, f"{name}.trans", cin + layers * growth, width, 1, 1, 0, dtype)
        self.name = name

    def __call__(self, x: Tensor, slope: float) -> Tensor:
        feats = [x]
        for conv in self.convs:
            inp = feats[0] if len(feats) == 1 else ops.concat_channels(feats)
            feats.append(ops.leaky_relu(conv(inp), slope))
        return ops.leaky_relu(self.transition(ops.concat_channels(feats)), slope)

    def named_params(self):
        out = []
        for conv in self.convs:
            out.extend(conv.named_params())
        out.extend(self.transition.named_params())
        return out


class LocalRefineNet(ParamModel):
    def __init__(self, config: RefineNetConfig | None = None, dtype=np.float32):
        super().__init__()
        self.config = config or RefineNetConfig()
        self.config.validate()
        cfg = self.config
        rng = make_rng(cfg.seed, 0x10CA1)
        r2 = UNSHUFFLE_FACTOR * UNSHUFFLE_FACTOR

        # the smoothing branch starts as a near-identity (pass-through taps
        # plus small noise): with the identity-initialized heads this makes
        # the whole untrained local stage a gentle smoother of its input
        # instead of a random projection, which keeps early joint training
        # anchored to the global stage's output
        s1, s2 = cfg.smooth_widths
        self.smooth_convs = [
            self._track(Conv2dLayer(rng, self.registry, "smooth.conv0", 3, s1, 3, 1, 1, dtype)),
            self._track(Conv2dLayer(rng, self.registry, "smooth.conv1", s1, s2, 3, 1, 1, dtype)),
            self._track(Conv2dLayer(rng, self.registry, "smooth.conv2", s2, 3, 3, 1, 1, dtype)),
        ]
        for conv, (cin, cout) in zip(self.smooth_convs, ((3, s1), (s1, s2), (s2, 3))):
            conv.w.data *= 0.1
            for c in range(cout):
                conv.w.data[c, c % cin, 1, 1] += 1.0

        self.nodes: dict[tuple[int, int], DenseBlockModule] = {}
        self.up_projs: dict[tuple[int, int], Conv2dLayer] = {}
        for i in range(GRID_DEPTH):
            for j in range(GRID_DEPTH - i):
                cin = self.node_input_channels(i, j, 3 * r2)
                self.nodes[(i, j)] = self._track(
                    DenseBlockModule(rng, self.registry, f"grid.node{i}{j}", cin,
                                     cfg.widths[i], cfg.growths[i], cfg.block_layers[i], dtype)
                )
                if j > 0:
                    self.up_projs[(i, j)] = self._track(
                        Conv2dLayer(rng, self.registry, f"grid.up{i}{j}", cfg.widths[i + 1], cfg.widths[i],
                                    1, 1, 0, dtype)
                    )

        w0 = cfg.widths[0]
        self.head_gain = self._track(
            Conv2dLayer(rng, self.registry, "head.gain", w0, 3, 1, 1, 0, dtype, zero_weights=True, bias_value=1.0)
        )
        self.head_offset = self._track(
            Conv2dLayer(rng, self.registry, "head.offset", w0, 3, 1, 1, 0, dtype, zero_weights=True)
        )
        self.head_direct = self._track(Conv2dLayer(rng, self.registry, "head.direct", w0, 3, 1, 1, 0, dtype))

    def node_input_channels(self, i: int, j: int, input_channels: int) -> int:
        if j == 0:
            return input_channels if i == 0 else self.config.widths[i - 1]
        # j prior outputs at this depth plus the up-projected deeper node
        return (j + 1) * self.config.widths[i]

    # -- structural forwards ----------------------------------------------------

    def forward_grid(self, u: Tensor) -> Tensor:
        """Nested dense-block grid on the unshuffled input; returns the finest node."""
        slope = self.config.leaky_slope
        x: dict[tuple[int, int], Tensor] = {}
        x[(0, 0)] = self.nodes[(0, 0)](u, slope)
        for i in range(1, GRID_DEPTH):
            x[(i, 0)] = self.nodes[(i, 0)](ops.max_pool2d(x[(i - 1, 0)]), slope)
        for j in range(1, GRID_DEPTH):
            for i in range(GRID_DEPTH - j):
                up = self.up_projs[(i, j)](ops.upsample_bilinear(x[(i + 1, j - 1)], 2))
                cat = ops.concat_channels([x[(i, jj)] for jj in range(j)] + [up])
                x[(i, j)] = self.nodes[(i, j)](cat, slope)
        return x[(0, GRID_DEPTH - 1)]

    def required_multiple(self, k: int) -> int:
        # unshuffle halves, then GRID_DEPTH - 1 pools halve again
        return UNSHUFFLE_FACTOR * (1 << (GRID_DEPTH - 1)) * k

    def check_extents(self, h: int, w: int, k: int):
        if not isinstance(k, int) or k < 1:
            raise ArgumentError(f"downsample factor k must be an integer >= 1, got {k}")
        m = self.required_multiple(k)
        if h % m or w % m:
            raise ShapeError(f"extents {h}x{w} must be multiples of {m} for k={k}")

    def flop_plan(self, h: int, w: int, k: int = 1) -> list:
        """Exact per-op FLOP rows (branch, name, kind, flops) for one image.

        Convs contribute 2 * k^2 * Cin * Cout * Hout * Wout; every
        elementwise or resampling op costs 1 per output element.
        """
        self.check_extents(h, w, k)
        cfg = self.config
        rows: list = []

        def conv(branch, name, cin, cout, kk, sh, sw):
            rows.append((branch, name, "conv", 2 * kk * kk * cin * cout * sh * sw))

        def elem(branch, name, count):
            rows.append((branch, name, "elementwise", int(count)))

        s1, s2 = cfg.smooth_widths
        conv("smooth", "smooth.conv0", 3, s1, 3, h, w)
        elem("smooth", "smooth.act0", s1 * h * w)
        conv("smooth", "smooth.conv1", s1, s2, 3, h, w)
        elem("smooth", "smooth.act1", s2 * h * w)
        conv("smooth", "smooth.conv2", s2, 3, 3, h, w)
        elem("smooth", "smooth.clamp", 3 * h * w)

        hh, ww = h // k, w // k
        if k > 1:
            elem("coeff", "coeff.downsample", 3 * hh * ww)
        hh, ww = hh // UNSHUFFLE_FACTOR, ww // UNSHUFFLE_FACTOR
        cin0 = 3 * UNSHUFFLE_FACTOR * UNSHUFFLE_FACTOR
        elem("coeff", "coeff.unshuffle", cin0 * hh * ww)
        for (i, j), node in sorted(self.nodes.items()):
            sh, sw = hh >> i, ww >> i
            name = f"grid.node{i}{j}"
            cin = self.node_input_channels(i, j, cin0)
            if j > 0:
                elem("coeff", f"grid.up{i}{j}.resize", cfg.widths[i + 1] * sh * sw)
                conv("coeff", f"grid.up{i}{j}", cfg.widths[i + 1], cfg.widths[i], 1, sh, sw)
                elem("coeff", f"{name}.cat", cin * sh * sw)
            elif i > 0:
                elem("coeff", f"{name}.pool", cfg.widths[i - 1] * sh * sw)
            g, layers = cfg.growths[i], cfg.block_layers[i]
            for layer in range(layers):
                if layer > 0:
                    elem("coeff", f"{name}.densecat{layer}", (cin + layer * g) * sh * sw)
                conv("coeff", f"{name}.dense{layer}", cin + layer * g, g, 3, sh, sw)
                elem("coeff", f"{name}.denseact{layer}", g * sh * sw)
            elem("coeff", f"{name}.transcat", (cin + layers * g) * sh * sw)
            conv("coeff", f"{name}.trans", cin + layers * g, cfg.widths[i], 1, sh, sw)
            elem("coeff", f"{name}.transact", cfg.widths[i] * sh * sw)
        conv("coeff", "head.gain", cfg.widths[0], 3, 1, hh, ww)
        conv("coeff", "head.offset", cfg.widths[0], 3, 1, hh, ww)
        elem("coeff", "coeff.upsample.gain", 3 * h * w)
        elem("coeff", "coeff.upsample.offset", 3 * h * w)
        elem("combine", "combine.mul", 3 * h * w)
        elem("combine", "combine.add", 3 * h * w)
        elem("combine", "combine.clamp", 3 * h * w)
        return rows


def build_refine_net(config: RefineNetConfig | None = None) -> LocalRefineNet:
    return LocalRefineNet(config)


# -- graph-mode pipeline -------------------------------------------------------


def smooth_graph(model: LocalRefineNet, x: Tensor) -> Tensor:
    slope = model.config.leaky_slope
    c0, c1, c2 = model.smooth_convs
    return ops.clamp01(c2(ops.leaky_relu(c1(ops.leaky_relu(c0(x), slope)), slope)))


def coeff_graph(model: LocalRefineNet, x: Tensor, k: int = 1):
    """Gain/offset tensors at the full resolution of ``x``."""
    n, c, h, w = x.shape
    model.check_extents(h, w, k)
    xs = x if k == 1 else ops.resize_bilinear(x, h // k, w // k)
    u = ops.pixel_unshuffle(xs, UNSHUFFLE_FACTOR)
    feat = model.forward_grid(u)
    gain = model.head_gain(feat)
    offset = model.head_offset(feat)
    scale = UNSHUFFLE_FACTOR * k
    if scale > 1:
        gain = ops.upsample_bilinear(gain, scale)
        offset = ops.upsample_bilinear(offset, scale)
    return gain, offset


def refine_graph(model: LocalRefineNet, x: Tensor, k: int = 1, bypass_smooth: bool = False):
    """Full local stage; returns (output, gain, offset, smoothed)."""
    s = x if bypass_smooth else smooth_graph(model, x)
    gain, offset = coeff_graph(model, x, k)
    out = ops.clamp01(ops.add(ops.mul(gain, s), offset))
    return out, gain, offset, s


def direct_graph(model: LocalRefineNet, x: Tensor, k: int = 1) -> Tensor:
    """Ablation mode: map grid features straight to the output image."""
    n, c, h, w = x.shape
    model.check_extents(h, w, k)
    xs = x if k == 1 else ops.resize_bilinear(x, h // k, w // k)
    feat = model.forward_grid(ops.pixel_unshuffle(xs, UNSHUFFLE_FACTOR))
    out = model.head_direct(feat)
    scale = UNSHUFFLE_FACTOR * k
    if scale > 1:
        out = ops.upsample_bilinear(out, scale)
    return ops.clamp01(out)


# -- inference wrappers ----------------------------------------------------------


def smooth_branch(model: LocalRefineNet, img: ImageBuffer) -> ImageBuffer:
    """Run only the smoothing branch (any extents; output matches input)."""
    with no_grad():
        out = smooth_graph(model, Tensor(img.to_nchw()))
    return ImageBuffer.from_nchw(out.data, clamp=False)


def coeff_branch(model: LocalRefineNet, img: ImageBuffer, k: int = 1) -> CoefficientMaps:
    with no_grad():
        gain, offset = coeff_graph(model, Tensor(img.to_nchw()), k)
    return CoefficientMaps(gain.data[0].transpose(1, 2, 0).copy(),
                           offset.data[0].transpose(1, 2, 0).copy())


def enhance_local(model: LocalRefineNet, img: ImageBuffer, k: int = 1,
                  bypass_smooth: bool = False) -> ImageBuffer:
    """clamp(gain * smooth(img) + offset) at full input resolution."""
    smoothed = img if bypass_smooth else smooth_branch(model, img)
    maps = coeff_branch(model, img, k)
    out = np.clip(maps.gain * smoothed.data + maps.offset, 0.0, 1.0)
    return ImageBuffer(out)


def direct_predict(model: LocalRefineNet, img: ImageBuffer, k: int = 1) -> ImageBuffer:
    with no_grad():
        out = direct_graph(model, Tensor(img.to_nchw()), k)
    return ImageBuffer.from_nchw(out.data, clamp=False)
