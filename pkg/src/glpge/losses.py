"""Training objectives: L1, SSIM, total variation, coefficient smoothness,
and a least-squares patch-adversarial pair, combined by a weighted sum.

All losses are scalar graph tensors built from diffcore ops, so gradients
flow to whatever produced the inputs. ``composite_loss`` also accepts plain
floats (useful for logging/verification arithmetic).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.tensor import Tensor
from .errors import ArgumentError, ShapeError
from .layers import Conv2dLayer, ParamModel, make_rng

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class LossWeights:
    """Weights of the composite objective, in fixed order.

    Defaults: L1 1.0, SSIM 0.5, TV 0.01, adversarial 0.05, coefficient
    smoothness 0.01. The fine-tuning profile zeroes the adversarial term.
    """

    l1: float = 1.0
    ssim: float = 0.5
    tv: float = 0.01
    adv: float = 0.05
    coeff_smooth: float = 0.01

    def finetune_profile(self) -> "LossWeights":
        return LossWeights(self.l1, self.ssim, self.tv, 0.0, self.coeff_smooth)

    def as_tuple(self):
        return (self.l1, self.ssim, self.tv, self.adv, self.coeff_smooth)


def _require_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference."""
    _require_same_shape(a, b, "l1_loss")
    return ops.mean(ops.abs_val(ops.sub(a, b)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian; the 2-D window is its outer product."""
    xs = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(xs**2) / (2.0 * sigma**2))
    return g / g.sum()


def _merge_channels(t: Tensor) -> Tensor:
    n, c, h, w = t.shape
    return ops.reshape(t, (n * c, 1, h, w))


def _blur_valid(t: Tensor, win_v: Tensor, win_h: Tensor, zero_bias: Tensor) -> Tensor:
    """Separable valid-window Gaussian blur on an (M,1,H,W) tensor."""
    return ops.conv2d(ops.conv2d(t, win_v, zero_bias, 1, 0), win_h, zero_bias, 1, 0)


def ssim_index(a: Tensor, b: Tensor) -> Tensor:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Computed per channel and averaged over batch, channels, and window
    positions; unit dynamic range with C1 = 0.01^2, C2 = 0.03^2.
    Differentiable; ``ssim_index(x, x)`` is exactly 1.
    """
    _require_same_shape(a, b, "ssim_index")
    n, c, h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ArgumentError(f"ssim_index: extents must be >= {SSIM_WINDOW}, got {h}x{w}")
    dtype = a.dtype
    g = gaussian_window().astype(dtype)
    win_v = Tensor(g.reshape(1, 1, SSIM_WINDOW, 1))
    win_h = Tensor(g.reshape(1, 1, 1, SSIM_WINDOW))
    zero_bias = Tensor(np.zeros((1, 1, 1, 1), dtype=dtype))

    x = _merge_channels(a)
    y = _merge_channels(b)
    mu_x = _blur_valid(x, win_v, win_h, zero_bias)
    mu_y = _blur_valid(y, win_v, win_h, zero_bias)
    sig_xx = ops.sub(_blur_valid(ops.mul(x, x), win_v, win_h, zero_bias), ops.mul(mu_x, mu_x))
    sig_yy = ops.sub(_blur_valid(ops.mul(y, y), win_v, win_h, zero_bias), ops.mul(mu_y, mu_y))
    sig_xy = ops.sub(_blur_valid(ops.mul(x, y), win_v, win_h, zero_bias), ops.mul(mu_x, mu_y))

    c1 = float(SSIM_K1**2)
    c2 = float(SSIM_K2**2)
    num = ops.mul(
        ops.add_scalar(ops.mul_scalar(ops.mul(mu_x, mu_y), 2.0), c1),
        ops.add_scalar(ops.mul_scalar(sig_xy, 2.0), c2),
    )
    den = ops.mul(
        ops.add_scalar(ops.add(ops.mul(mu_x, mu_x), ops.mul(mu_y, mu_y)), c1),
        ops.add_scalar(ops.add(sig_xx, sig_yy), c2),
    )
    return ops.mean(ops.div(num, den))


def ssim_loss(a: Tensor, b: Tensor) -> Tensor:
    """1 - ssim_index; exactly 0 for identical inputs."""
    return ops.add_scalar(ops.mul_scalar(ssim_index(a, b), -1.0), 1.0)


def tv_loss(x: Tensor) -> Tensor:
    """Mean squared forward differences along height and width.

    Normalization: the summed squared differences in both directions are
    divided by the total element count N*C*H*W. A 2x2 single-channel plane
    [[0,1],[0,1]] therefore scores (1 + 1 + 0 + 0) / 4 = 0.5.
    """
    n, c, h, w = x.shape
    if h < 2 or w < 2:
        raise ArgumentError(f"tv_loss: extents must be >= 2, got {h}x{w}")
    dh = ops.sub(ops.slice_spatial(x, top=1), ops.slice_spatial(x, bottom=1))
    dw = ops.sub(ops.slice_spatial(x, left=1), ops.slice_spatial(x, right=1))
    total = ops.add(ops.sum_all(ops.mul(dh, dh)), ops.sum_all(ops.mul(dw, dw)))
    return ops.mul_scalar(total, 1.0 / (n * c * h * w))


def smoothness_reg(gain: Tensor, offset: Tensor) -> Tensor:
    """Squared-gradient penalty on the local gain and offset maps."""
    return ops.add(tv_loss(gain), tv_loss(offset))


# -- adversarial --------------------------------------------------------------


@dataclass
class DiscriminatorConfig:
    widths: tuple = (24, 48, 96, 192)
    leaky_slope: float = 0.2
    seed: int = 0


class PatchDiscriminator(ParamModel):
    """Strided-conv patch classifier: four 4x4 feature convs (stride 2,2,2,1)
    plus a 1-channel score conv, leaky-relu activations, 70x70 receptive
    field. Emits a score map, not a scalar."""

    def __init__(self, config: DiscriminatorConfig | None = None, dtype=np.float32):
        super().__init__()
        self.config = config or DiscriminatorConfig()
        w = self.config.widths
        rng = make_rng(self.config.seed, 0xD15C)
        cin = 3
        self.convs = []
        for i, (cout, stride) in enumerate(zip(w, (2, 2, 2, 1))):
            self.convs.append(
                self._track(Conv2dLayer(rng, self.registry, f"disc.conv{i}", cin, cout, 4, stride, 1, dtype))
            )
            cin = cout
        self.score = self._track(Conv2dLayer(rng, self.registry, "disc.score", cin, 1, 4, 1, 1, dtype))

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.convs:
            h = ops.leaky_relu(conv(h), self.config.leaky_slope)
        return self.score(h)


def build_discriminator(config: DiscriminatorConfig | None = None) -> PatchDiscriminator:
    return PatchDiscriminator(config)


def adversarial_losses(disc, real: Tensor, fake: Tensor):
    """Least-squares adversarial pair (d_loss, g_loss).

    d_loss = 0.5 * mean((D(real) - 1)^2) + 0.5 * mean(D(fake)^2), scored in
    one batched pass over the detached pair (identical batch sizes make the
    two-term average equal the pooled mean); g_loss = mean((D(fake) - 1)^2)
    and is the only path that reaches the generator.
    """
    _require_same_shape(real, fake, "adversarial_losses")
    both = disc.forward(ops.concat_batch(real.detach(), fake.detach()))
    targets = np.zeros(both.shape, dtype=both.dtype)
    targets[: real.shape[0]] = 1.0
    d_loss = ops.mean(_squared(ops.sub(both, Tensor(targets))))
    g_score = disc.forward(fake)
    g_loss = ops.mean(_squared(ops.add_scalar(g_score, -1.0)))
    return d_loss, g_loss


def _squared(x: Tensor) -> Tensor:
    return ops.mul(x, x)


# -- composition ---------------------------------------------------------------


def composite_loss(weights: LossWeights, parts: dict):
    """Weighted sum of the five loss components.

    ``parts`` maps component names ("l1", "ssim", "tv", "adv",
    "coeff_smooth") to scalar tensors or floats; missing components count
    as zero and zero-weighted components are skipped entirely, so a lambda
    of 0 makes the total independent of that part. Returns
    ``(total, unweighted)`` where ``unweighted`` holds plain floats for
    logging.
    """
    unweighted = {}
    total_f = 0.0
    total_t = None
    for name, lam in zip(("l1", "ssim", "tv", "adv", "coeff_smooth"), weights.as_tuple()):
        part = parts.get(name)
        if part is None:
            unweighted[name] = 0.0
            continue
        value = part.item() if isinstance(part, Tensor) else float(part)
        if math.isnan(value):
            raise ArgumentError(f"composite_loss: component {name} is NaN")
        unweighted[name] = value
        if lam == 0.0:
            continue
        if isinstance(part, Tensor):
            term = ops.mul_scalar(part, lam)
            total_t = term if total_t is None else ops.add(total_t, term)
        else:
            total_f += lam * value
    if total_t is not None:
        if total_f:
            total_t = ops.add_scalar(total_t, total_f)
        return total_t, unweighted
    return total_f, unweighted
