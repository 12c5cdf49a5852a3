"""Orchestration: two-phase training (global pretrain, frozen-global joint
training, fine-tune), checkpoint serialization, and the baseline/fast
inference paths.

Checkpoints (.glpge) are a magic line, an 8-byte little-endian manifest
length, a canonical JSON manifest (tensor names/shapes/offsets plus
training metadata and the full config), and a contiguous little-endian
float32 payload; save -> load -> save is byte-identical.

During joint training and fine-tuning the global network is frozen: its
parameters are excluded from the optimizer and its weight bytes are copied
unchanged into the output checkpoint. Crops, batch composition, and all
init are keyed on (seed, phase, step) Philox streams, so a (seed, config,
manifest) triple fully determines the run.
"""

from __future__ import annotations

import csv
import json
import math
import struct
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import losses
from .config import CliConfig, config_hash, parse_config, dump_config
from .diffcore import Adam, no_grad, ops
from .diffcore.tensor import Tensor
from .errors import ArgumentError, CheckpointError, ConfigError
from .evalkit import count_flops
from .globalnet import GlobalParamNet, enhance_global, enhance_graph
from .images import ImageBuffer, load_image, resize
from .losses import LossWeights, PatchDiscriminator, adversarial_losses, composite_loss
from .refinenet import LocalRefineNet, coeff_branch, direct_graph, enhance_local, refine_graph

CHECKPOINT_MAGIC = b"GLPGE1\n"
MIN_ENHANCE_SIDE = 64

_PHASE_TAGS = {"gpp": 0xA0, "joint": 0xA1, "finetune": 0xA2}
LOG_COLUMNS = ("step", "l1", "ssim", "tv", "adv_g", "adv_d", "coeff_smooth", "total")


# -- checkpoints -----------------------------------------------------------------


@dataclass
class Checkpoint:
    weights: dict  # name -> float32 ndarray
    meta: dict     # phase, step, config_hash, config

    def save(self, path):
        path = Path(path)
        names = sorted(self.weights)
        tensors = []
        offset = 0
        blobs = []
        for name in names:
            arr = np.ascontiguousarray(self.weights[name], dtype="<f4")
            tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
            blob = arr.tobytes()
            offset += len(blob)
            blobs.append(blob)
        manifest = {"format_version": 1, "meta": self.meta, "tensors": tensors}
        mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<Q", len(mbytes)))
            fh.write(mbytes)
            for blob in blobs:
                fh.write(blob)
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        raw = path.read_bytes()
        if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"not a checkpoint file (bad magic): {path}")
        pos = len(CHECKPOINT_MAGIC)
        (mlen,) = struct.unpack("<Q", raw[pos : pos + 8])
        pos += 8
        try:
            manifest = json.loads(raw[pos : pos + mlen])
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"corrupt checkpoint manifest: {path}") from exc
        if manifest.get("format_version") != 1:
            raise CheckpointError(f"unsupported checkpoint version {manifest.get('format_version')}")
        payload = raw[pos + mlen :]
        weights = {}
        for entry in manifest["tensors"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            start = entry["offset"]
            end = start + 4 * count
            if end > len(payload):
                raise CheckpointError(f"checkpoint payload truncated at {entry['name']}")
            weights[entry["name"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(
                entry["shape"]
            ).copy()
        return cls(weights=weights, meta=manifest["meta"])

    def config(self) -> CliConfig:
        return parse_config(json.dumps(self.meta["config"]))


def _namespaced(model, prefix: str) -> dict:
    return {f"{prefix}.{name}": arr for name, arr in model.state().items()}


def _load_namespaced(model, weights: dict, prefix: str):
    sub = {name[len(prefix) + 1 :]: arr for name, arr in weights.items() if name.startswith(prefix + ".")}
    if not sub:
        raise CheckpointError(f"checkpoint has no '{prefix}.*' weights")
    model.load_state(sub)


# -- model assembly ----------------------------------------------------------------


def build_models(cfg: CliConfig, with_disc: bool = True):
    """Build the three networks with every stochastic seed tied to train.seed."""
    seed = cfg.train.seed
    gnet = GlobalParamNet(replace(cfg.global_net, seed=seed))
    rnet = LocalRefineNet(replace(cfg.refine_net, seed=seed))
    disc = PatchDiscriminator(replace(cfg.discriminator, seed=seed)) if with_disc else None
    return gnet, rnet, disc


def _check_ckpt_config(ckpt: Checkpoint, cfg: CliConfig):
    stored = ckpt.config()
    for name in ("global_net", "refine_net", "discriminator"):
        if getattr(stored, name) != getattr(cfg, name):
            raise CheckpointError(
                f"checkpoint {name} architecture differs from the requested config"
            )


# -- data handling -----------------------------------------------------------------


def _load_pairs(manifest_rows):
    if not manifest_rows:
        raise ConfigError("manifest is empty")
    pairs = []
    for row in manifest_rows:
        degraded = load_image(row["degraded"])
        clean = load_image(row["clean"])
        if degraded.data.shape != clean.data.shape:
            raise ConfigError(f"pair extents differ for {row['degraded']}")
        pairs.append((degraded, clean))
    return pairs


def _phase_rng(seed: int, phase: str, step: int):
    from .layers import make_rng

    return make_rng(seed, _PHASE_TAGS[phase], step)


def _stack(images) -> np.ndarray:
    return np.stack([img.data.transpose(2, 0, 1) for img in images])


def _crop_batch(arrays, rng, crop: int, batch: int):
    """Sample (source index, y, x) per batch slot; never reads out of bounds."""
    n = len(arrays)
    idx = rng.integers(0, n, size=batch)
    out = []
    coords = []
    for i in idx:
        h, w = arrays[i][0].shape[1:]
        if h < crop or w < crop:
            raise ConfigError(f"image {h}x{w} smaller than crop side {crop}")
        y = int(rng.integers(0, h - crop + 1))
        x = int(rng.integers(0, w - crop + 1))
        coords.append((int(i), y, x))
        out.append(tuple(a[:, y : y + crop, x : x + crop] for a in arrays[i]))
    batched = tuple(np.stack(parts) for parts in zip(*out))
    return batched, coords


class _LossLog:
    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows = []

    def add(self, step, parts, total):
        row = {
            "step": step,
            "l1": parts.get("l1", 0.0),
            "ssim": parts.get("ssim", 0.0),
            "tv": parts.get("tv", 0.0),
            "adv_g": parts.get("adv", 0.0),
            "adv_d": parts.get("adv_d", 0.0),
            "coeff_smooth": parts.get("coeff_smooth", 0.0),
            "total": total,
        }
        self.rows.append(row)

    def write(self):
        if self.path is None:
            return
        with open(self.path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(LOG_COLUMNS))
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


# -- training phases ---------------------------------------------------------------


def pretrain_global(manifest_rows, cfg: CliConfig, log_path=None) -> Checkpoint:
    """Train the global stage alone (L1 + SSIM, plus the adversarial pair
    when its weight is nonzero) on full manifest images."""
    cfg.validate()
    pairs = _load_pairs(manifest_rows)
    tcfg = cfg.train
    gnet, _, disc = build_models(cfg, with_disc=True)
    weights = tcfg.loss_weights
    opt = Adam(gnet.params(), tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    d_opt = Adam(disc.params(), tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps) if weights.adv > 0 else None

    side = cfg.global_net.input_side
    data = [
        (
            d.data.transpose(2, 0, 1),
            resize(d, side, side).data.transpose(2, 0, 1),
            c.data.transpose(2, 0, 1),
        )
        for d, c in pairs
    ]
    log = _LossLog(log_path)
    for step in range(tcfg.steps_gpp):
        rng = _phase_rng(tcfg.seed, "gpp", step)
        (x_np, thumb_np, y_np), _ = _crop_full(data, rng, tcfg.batch_size)
        x = Tensor(x_np)
        thumb = Tensor(thumb_np)
        target = Tensor(y_np)
        out = enhance_graph(gnet, x, thumb, tcfg.fusion_strategy)
        parts = {"l1": losses.l1_loss(out, target), "ssim": losses.ssim_loss(out, target)}
        adv_d_value = 0.0
        if weights.adv > 0:
            d_loss, g_loss = adversarial_losses(disc, target, out)
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()
            parts["adv"] = g_loss
            adv_d_value = d_loss.item()
        total, unweighted = composite_loss(weights, parts)
        opt.zero_grad()
        total.backward()
        opt.step()
        unweighted["adv_d"] = adv_d_value
        log.add(step, unweighted, total.item())
    log.write()
    meta = {"phase": "gpp", "step": tcfg.steps_gpp, "config_hash": config_hash(cfg),
            "config": json.loads(dump_config(cfg, indent=None))}
    return Checkpoint(weights=_namespaced(gnet, "global"), meta=meta)


def _crop_full(data, rng, batch):
    """Batch full images (no spatial crop); manifest images share extents."""
    n = len(data)
    idx = rng.integers(0, n, size=batch)
    parts = [tuple(data[i][j] for j in range(len(data[0]))) for i in idx]
    return tuple(np.stack(cols) for cols in zip(*parts)), [int(i) for i in idx]


def train_joint(manifest_rows, cfg: CliConfig, gpp_ckpt: Checkpoint, log_path=None,
                phase: str = "joint", start_ckpt: Checkpoint | None = None,
                steps: int | None = None, force_weights: LossWeights | None = None) -> Checkpoint:
    """Joint phase: optimize the local refiner (and discriminator when the
    adversarial weight is nonzero) behind the frozen global stage."""
    cfg.validate()
    pairs = _load_pairs(manifest_rows)
    tcfg = cfg.train
    _check_ckpt_config(gpp_ckpt, cfg)
    gnet, rnet, disc = build_models(cfg, with_disc=True)
    _load_namespaced(gnet, gpp_ckpt.weights, "global")
    gnet.freeze()
    start_step = 0
    if start_ckpt is not None:
        _load_namespaced(rnet, start_ckpt.weights, "refine")
        _load_namespaced(disc, start_ckpt.weights, "disc")
        start_step = int(start_ckpt.meta.get("step", 0))

    weights = force_weights or tcfg.loss_weights
    train_disc = weights.adv > 0
    opt = Adam(rnet.params(), tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    d_opt = Adam(disc.params(), tcfg.lr, tcfg.beta1, tcfg.beta2, tcfg.adam_eps) if train_disc else None

    # the frozen global stage is deterministic per image: cache its output
    if tcfg.stage_order == "global_then_local":
        data = [
            (enhance_global(gnet, d, tcfg.fusion_strategy).data.transpose(2, 0, 1),
             c.data.transpose(2, 0, 1))
            for d, c in pairs
        ]
    else:
        data = [(d.data.transpose(2, 0, 1), c.data.transpose(2, 0, 1)) for d, c in pairs]

    n_steps = tcfg.steps_joint if steps is None else steps
    if tcfg.stage_order == "global_only":
        n_steps = 0  # nothing to optimize behind a global-only pipeline

    side = cfg.global_net.input_side
    log = _LossLog(log_path)
    for step in range(start_step, start_step + n_steps):
        rng = _phase_rng(tcfg.seed, phase, step)
        (x_np, y_np), _ = _crop_batch(data, rng, tcfg.crop_side, tcfg.batch_size)
        x = Tensor(x_np)
        target = Tensor(y_np)
        gain = offset = None
        if tcfg.refine_mode == "parametric":
            out, gain, offset, _ = refine_graph(rnet, x, 1)
        else:
            out = direct_graph(rnet, x, 1)
        if tcfg.stage_order == "local_then_global":
            thumb = ops.resize_bilinear(out, side, side)
            out = enhance_graph(gnet, out, thumb, tcfg.fusion_strategy)
        parts = {"l1": losses.l1_loss(out, target), "ssim": losses.ssim_loss(out, target),
                 "tv": losses.tv_loss(out)}
        if gain is not None:
            parts["coeff_smooth"] = losses.smoothness_reg(gain, offset)
        adv_d_value = 0.0
        if train_disc:
            d_loss, g_loss = adversarial_losses(disc, target, out)
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()
            parts["adv"] = g_loss
            adv_d_value = d_loss.item()
        total, unweighted = composite_loss(weights, parts)
        opt.zero_grad()
        total.backward()
        opt.step()
        unweighted["adv_d"] = adv_d_value
        log.add(step, unweighted, total.item())
    log.write()

    weights_out = {}
    weights_out.update({k: v for k, v in gpp_ckpt.weights.items() if k.startswith("global.")})
    weights_out.update(_namespaced(rnet, "refine"))
    weights_out.update(_namespaced(disc, "disc"))
    meta = {"phase": phase, "step": start_step + n_steps, "config_hash": config_hash(cfg),
            "config": json.loads(dump_config(cfg, indent=None))}
    return Checkpoint(weights=weights_out, meta=meta)


def finetune(manifest_rows, cfg: CliConfig, joint_ckpt: Checkpoint, log_path=None) -> Checkpoint:
    """Same as the joint phase with the adversarial term forced off."""
    if not any(k.startswith("refine.") for k in joint_ckpt.weights):
        raise CheckpointError("fine-tuning needs a joint checkpoint (refine.* weights missing)")
    return train_joint(
        manifest_rows,
        cfg,
        joint_ckpt,
        log_path=log_path,
        phase="finetune",
        start_ckpt=joint_ckpt,
        steps=cfg.train.steps_finetune,
        force_weights=cfg.train.loss_weights.finetune_profile(),
    )


# -- inference ---------------------------------------------------------------------


def _reflect_pad_to_multiple(img: ImageBuffer, multiple: int):
    h, w = img.height, img.width
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img, (0, 0)
    padded = np.pad(img.data, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return ImageBuffer(padded), (ph, pw)


class Enhancer:
    """Checkpoint-backed pipeline, reusable across many images."""

    def __init__(self, ckpt: Checkpoint, mode: str = "baseline", k_fast: int = 2,
                 stage_order: str | None = None):
        if mode not in ("baseline", "fast"):
            raise ArgumentError(f"mode must be 'baseline' or 'fast', got {mode!r}")
        cfg = ckpt.config()
        self.cfg = cfg
        self.stage_order = stage_order or cfg.train.stage_order
        if self.stage_order not in ("global_then_local", "local_then_global", "global_only"):
            raise ArgumentError(f"unknown stage order {self.stage_order!r}")
        self.k = 1 if mode == "baseline" else int(k_fast)
        self.mode = mode
        self.gnet, self.rnet, _ = build_models(cfg, with_disc=False)
        _load_namespaced(self.gnet, ckpt.weights, "global")
        if self.stage_order != "global_only":
            _load_namespaced(self.rnet, ckpt.weights, "refine")

    def _local(self, img: ImageBuffer) -> ImageBuffer:
        padded, (ph, pw) = _reflect_pad_to_multiple(img, self.rnet.required_multiple(self.k))
        if self.cfg.train.refine_mode == "direct":
            with no_grad():
                out = direct_graph(self.rnet, Tensor(padded.to_nchw()), self.k)
            result = ImageBuffer.from_nchw(out.data, clamp=False)
        else:
            result = enhance_local(self.rnet, padded, self.k)
        if ph or pw:
            result = ImageBuffer(result.data[: img.height, : img.width])
        return result

    def __call__(self, img: ImageBuffer) -> ImageBuffer:
        if img.height < MIN_ENHANCE_SIDE or img.width < MIN_ENHANCE_SIDE:
            raise ArgumentError(
                f"enhance needs extents >= {MIN_ENHANCE_SIDE}, got {img.height}x{img.width}"
            )
        strategy = self.cfg.train.fusion_strategy
        if self.stage_order == "global_only":
            return enhance_global(self.gnet, img, strategy)
        if self.stage_order == "global_then_local":
            return self._local(enhance_global(self.gnet, img, strategy))
        return enhance_global(self.gnet, self._local(img), strategy)


def enhance_pipeline(ckpt: Checkpoint, img: ImageBuffer, mode: str = "baseline",
                     k_fast: int = 2, stage_order: str | None = None) -> ImageBuffer:
    """One-shot convenience wrapper around Enhancer."""
    return Enhancer(ckpt, mode=mode, k_fast=k_fast, stage_order=stage_order)(img)


# -- benchmarking ---------------------------------------------------------------------


def bench(ckpt: Checkpoint, sizes, k_fast: int = 2, repeats: int = 3) -> dict:
    """Analytic FLOPs and wall times for baseline vs fast inference."""
    cfg = ckpt.config()
    baseline = Enhancer(ckpt, "baseline")
    fast = Enhancer(ckpt, "fast", k_fast=k_fast)
    report = {"k_fast": k_fast, "sizes": []}
    for side in sizes:
        if side % baseline.rnet.required_multiple(k_fast):
            raise ArgumentError(f"bench size {side} must be a multiple of "
                                f"{baseline.rnet.required_multiple(k_fast)}")
        flops_base = count_flops(baseline.rnet, side, side, k=1)
        flops_fast = count_flops(fast.rnet, side, side, k=k_fast)
        global_flops = count_flops(baseline.gnet, side, side, strategy=cfg.train.fusion_strategy)
        rng = np.random.default_rng(0)
        img = ImageBuffer(rng.random((side, side, 3), dtype=np.float32))

        def _time(fn):
            best = math.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn()
                best = min(best, time.perf_counter() - t0)
            return best

        entry = {
            "side": side,
            "backbone_flops": global_flops.branch_total("backbone"),
            "flops_baseline": flops_base.total + global_flops.total,
            "flops_fast": flops_fast.total + global_flops.total,
            "coeff_flops_baseline": flops_base.branch_total("coeff"),
            "coeff_flops_fast": flops_fast.branch_total("coeff"),
            "coeff_conv_ratio": flops_fast.conv_total("coeff") / flops_base.conv_total("coeff"),
            "wall_baseline_s": _time(lambda: baseline(img)),
            "wall_fast_s": _time(lambda: fast(img)),
            "coeff_wall_baseline_s": _time(lambda: coeff_branch(baseline.rnet, img, 1)),
            "coeff_wall_fast_s": _time(lambda: coeff_branch(fast.rnet, img, k_fast)),
        }
        report["sizes"].append(entry)
    return report
