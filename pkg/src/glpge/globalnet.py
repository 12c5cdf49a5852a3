"""Global stage: predict three photometric scalars from a fixed-size
thumbnail, apply the corresponding filters at full resolution in parallel,
and fuse the branches.

The backbone is a 15-conv stack (three convs per stage, the last of each
stage strided) pooled to a feature vector; three small fully-connected
heads emit brightness/contrast/saturation in the open interval (-1, 1)
via tanh. Fusion of the filtered branches is either a learned 1x1 conv
over the 9 stacked channels ("concatenation", the default), a plain
average ("additive"), or sequential filter application ("cascading").

The fusion conv starts as channel-group averaging, so a freshly built
model with zeroed heads is an exact identity on in-range images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import no_grad, ops
from .diffcore.tensor import Tensor
from .errors import ArgumentError, ConfigError
from .images import FILTER_KINDS, GRAY_WEIGHTS, ImageBuffer, apply_filter, resize
from .layers import Conv2dLayer, LinearLayer, ParamModel, make_rng

FUSION_STRATEGIES = ("concatenation", "cascading", "additive")
# keep tanh outputs strictly inside (-1, 1) even when float32 saturates
PARAM_SCALE = 1.0 - 1e-6


@dataclass(frozen=True)
class ParamSet:
    """The three global adjustment scalars, each in (-1, 1)."""

    brightness: float
    contrast: float
    saturation: float

    def as_tuple(self):
        return (self.brightness, self.contrast, self.saturation)


@dataclass
class GlobalNetConfig:
    stage_widths: tuple = (8, 16, 32, 64, 128)
    layers_per_stage: int = 3
    head_hidden: int = 64
    input_side: int = 224
    leaky_slope: float = 0.2
    seed: int = 0

    @classmethod
    def micro(cls) -> "GlobalNetConfig":
        """Tiny variant for gradient checks (6 convs, 16 px thumbnails)."""
        return cls(stage_widths=(4, 6, 8), layers_per_stage=2, head_hidden=8, input_side=16)

    def validate(self):
        if not self.stage_widths or any(w < 1 for w in self.stage_widths):
            raise ConfigError(f"stage widths must be positive, got {self.stage_widths}")
        if self.layers_per_stage < 1:
            raise ConfigError("layers_per_stage must be >= 1")
        if self.input_side % (1 << len(self.stage_widths)):
            raise ConfigError(
                f"input side {self.input_side} not divisible by 2^{len(self.stage_widths)}"
            )


class GlobalParamNet(ParamModel):
    def __init__(self, config: GlobalNetConfig | None = None, dtype=np.float32):
        super().__init__()
        self.config = config or GlobalNetConfig()
        self.config.validate()
        cfg = self.config
        rng = make_rng(cfg.seed, 0x61)
        self.backbone = []
        cin = 3
        idx = 0
        for stage, width in enumerate(cfg.stage_widths):
            for layer in range(cfg.layers_per_stage):
                stride = 2 if layer == cfg.layers_per_stage - 1 else 1
                self.backbone.append(
                    self._track(
                        Conv2dLayer(rng, self.registry, f"backbone.conv{idx:02d}", cin, width, 3, stride, 1, dtype)
                    )
                )
                cin = width
                idx += 1
        feat = cfg.stage_widths[-1]
        self.heads = {}
        for kind in FILTER_KINDS:
            self.heads[kind] = (
                self._track(LinearLayer(rng, self.registry, f"head.{kind}.fc0", feat, cfg.head_hidden, dtype)),
                self._track(LinearLayer(rng, self.registry, f"head.{kind}.fc1", cfg.head_hidden, 1, dtype)),
            )
        self.fusion = self._track(Conv2dLayer(rng, self.registry, "fusion", 9, 3, 1, 1, 0, dtype, zero_weights=True))
        w = np.zeros((3, 9, 1, 1), dtype=dtype)
        for c in range(3):
            w[c, c::3, 0, 0] = 1.0 / 3.0
        self.fusion.w.data = w

    # -- graph-mode forward ----------------------------------------------------

    def forward_params(self, thumb: Tensor):
        """Thumbnail batch -> three (N,1,1,1) tensors in (-1, 1)."""
        h = thumb
        slope = self.config.leaky_slope
        for conv in self.backbone:
            h = ops.leaky_relu(conv(h), slope)
        pooled = ops.global_avg_pool(h)
        out = []
        for kind in FILTER_KINDS:
            fc0, fc1 = self.heads[kind]
            p = fc1(ops.leaky_relu(fc0(pooled), slope))
            out.append(ops.mul_scalar(ops.tanh(p), PARAM_SCALE))
        return tuple(out)

    def backbone_conv_count(self) -> int:
        return sum(1 for info in self.registry if info.name.startswith("backbone."))

    def flop_plan(self, h: int, w: int, strategy: str = "concatenation") -> list:
        """Exact per-op FLOP rows (branch, name, kind, flops) for one image.

        The "backbone" branch (thumbnail resize, convs, heads) is the same
        for every input size; the "fusion" branch (full-resolution filters
        and branch fusion) is strictly per-pixel.
        """
        cfg = self.config
        rows: list = []

        def conv(branch, name, cin, cout, kk, sh, sw):
            rows.append((branch, name, "conv", 2 * kk * kk * cin * cout * sh * sw))

        def elem(branch, name, count):
            rows.append((branch, name, "elementwise", int(count)))

        side = cfg.input_side
        elem("backbone", "thumbnail.resize", 3 * side * side)
        s = side
        for info in self.registry:
            if not info.name.startswith("backbone."):
                continue
            out_s = s // info.stride
            conv("backbone", info.name, info.cin, info.cout, info.k, out_s, out_s)
            elem("backbone", info.name + ".act", info.cout * out_s * out_s)
            s = out_s
        feat = cfg.stage_widths[-1]
        elem("backbone", "gap", feat)
        for kind in FILTER_KINDS:
            rows.append(("backbone", f"head.{kind}.fc0", "linear", 2 * feat * cfg.head_hidden))
            elem("backbone", f"head.{kind}.act", cfg.head_hidden)
            rows.append(("backbone", f"head.{kind}.fc1", "linear", 2 * cfg.head_hidden))
            elem("backbone", f"head.{kind}.tanh", 1)

        px = h * w
        filter_cost = {
            # per-op elementwise counts over (3, h, w) images, plus the gray conv
            "brightness": [("mul", 3 * px), ("clamp", 3 * px)],
            "contrast": [("gray", None), ("gap", px), ("sub", 3 * px), ("mul", 3 * px),
                         ("add", 3 * px), ("clamp", 3 * px)],
            "saturation": [("gray", None), ("sub", 3 * px), ("mul", 3 * px),
                           ("add", 3 * px), ("clamp", 3 * px)],
        }
        # cascading runs the same three filters, just in sequence (no fusion step)
        for kind in FILTER_KINDS:
            for op_name, count in filter_cost[kind]:
                if op_name == "gray":
                    conv("fusion", f"filter.{kind}.gray", 3, 1, 1, h, w)
                else:
                    elem("fusion", f"filter.{kind}.{op_name}", count)
        if strategy == "concatenation":
            elem("fusion", "fuse.concat", 9 * px)
            conv("fusion", "fusion", 9, 3, 1, h, w)
            elem("fusion", "fuse.clamp", 3 * px)
        elif strategy == "additive":
            elem("fusion", "fuse.add", 2 * 3 * px)
            elem("fusion", "fuse.scale", 3 * px)
            elem("fusion", "fuse.clamp", 3 * px)
        return rows


def build_global_net(config: GlobalNetConfig | None = None) -> GlobalParamNet:
    return GlobalParamNet(config)


# -- differentiable filters (graph mode) ---------------------------------------


def _gray_graph(x: Tensor) -> Tensor:
    w = np.array(GRAY_WEIGHTS, dtype=x.dtype).reshape(1, 3, 1, 1)
    return ops.conv2d(x, Tensor(w), Tensor(np.zeros((1, 1, 1, 1), dtype=x.dtype)), 1, 0)


def filter_graph(x: Tensor, kind: str, p: Tensor) -> Tensor:
    """Graph analogue of images.apply_filter; p is an (N,1,1,1) tensor."""
    gain = ops.add_scalar(p, 1.0)
    if kind == "brightness":
        out = ops.mul(x, gain)
    elif kind == "contrast":
        mu = ops.global_avg_pool(_gray_graph(x))
        out = ops.add(ops.mul(ops.sub(x, mu), gain), mu)
    elif kind == "saturation":
        g = _gray_graph(x)
        out = ops.add(g, ops.mul(ops.sub(x, g), gain))
    else:
        raise ArgumentError(f"unknown filter kind {kind!r}")
    return ops.clamp01(out)


def enhance_graph(model: GlobalParamNet, x_full: Tensor, thumb: Tensor, strategy: str = "concatenation") -> Tensor:
    """Differentiable full pipeline of the global stage (training path)."""
    params = model.forward_params(thumb)
    if strategy == "cascading":
        h = x_full
        for kind, p in zip(FILTER_KINDS, params):
            h = filter_graph(h, kind, p)
        return h
    branches = [filter_graph(x_full, kind, p) for kind, p in zip(FILTER_KINDS, params)]
    if strategy == "additive":
        total = ops.add(ops.add(branches[0], branches[1]), branches[2])
        return ops.clamp01(ops.mul_scalar(total, 1.0 / 3.0))
    if strategy == "concatenation":
        return ops.clamp01(model.fusion(ops.concat_channels(branches)))
    raise ConfigError(f"unknown fusion strategy {strategy!r}")


# -- inference (image buffers) --------------------------------------------------


def predict_params(model: GlobalParamNet, img: ImageBuffer) -> ParamSet:
    """Resize to the configured thumbnail side and regress the three scalars."""
    side = model.config.input_side
    thumb = resize(img, side, side, "bilinear")
    with no_grad():
        pb, pc, ps = model.forward_params(Tensor(thumb.to_nchw()))
    return ParamSet(pb.item(), pc.item(), ps.item())


def fuse(model: GlobalParamNet, branches, strategy: str, source: ImageBuffer | None = None,
         params: ParamSet | None = None) -> ImageBuffer:
    """Combine the three filtered branch images.

    ``cascading`` ignores the branches and re-applies the filters in
    sequence (brightness, contrast, saturation) to ``source``. Averaging
    paths accumulate in float64, so fusing three identical branches
    reproduces them bit-exactly.
    """
    if strategy not in FUSION_STRATEGIES:
        raise ConfigError(f"unknown fusion strategy {strategy!r}")
    if strategy == "cascading":
        if source is None or params is None:
            raise ArgumentError("cascading fusion needs the source image and its parameters")
        out = source
        for kind, p in zip(FILTER_KINDS, params.as_tuple()):
            out = apply_filter(out, kind, p)
        return out
    branches = list(branches)
    if len(branches) != 3:
        raise ArgumentError(f"fusion expects 3 branch images, got {len(branches)}")
    shapes = {(b.height, b.width) for b in branches}
    if len(shapes) != 1:
        raise ArgumentError(f"branch extents differ: {sorted(shapes)}")
    stack = np.stack([b.data.astype(np.float64) for b in branches])  # (3, H, W, 3)
    if strategy == "additive":
        out = (stack[0] + stack[1] + stack[2]) / 3.0
    else:  # concatenation: learned 1x1 conv over the 9 stacked channels
        w = model.fusion.w.data.astype(np.float64).reshape(3, 9)
        # channel order matches the graph path: branch-major (b0 RGB, b1 RGB, b2 RGB)
        flat = stack.transpose(1, 2, 0, 3).reshape(stack.shape[1], stack.shape[2], 9)
        bias = model.fusion.b.data.astype(np.float64).reshape(3)
        out = flat @ w.T + bias
    return ImageBuffer(np.clip(out, 0.0, 1.0).astype(np.float32))


def enhance_global(model: GlobalParamNet, img: ImageBuffer, strategy: str = "concatenation") -> ImageBuffer:
    """Predict parameters from the thumbnail, filter at full resolution, fuse."""
    params = predict_params(model, img)
    if strategy == "cascading":
        return fuse(model, (), strategy, source=img, params=params)
    branches = [apply_filter(img, kind, p) for kind, p in zip(FILTER_KINDS, params.as_tuple())]
    return fuse(model, branches, strategy, source=img, params=params)
