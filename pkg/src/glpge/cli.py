"""Batch command-line front-end.

Subcommands: synth, train (gpp | joint | finetune), enhance, eval, bench,
ablate, config. Exit codes: 0 success, 2 usage error, 1 runtime error.
GLPGE_THREADS bounds kernel worker threads; --seed reaches every stochastic
component (synthesis, weight init, crop sampling).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import CliConfig, dump_config, load_config
from .errors import ArgumentError
from .evalkit import evaluate_pairs, psnr, ssim
from .images import ImageBuffer, load_image, resize, save_image
from .losses import LossWeights
from .synthdoc import build_dataset, load_manifest

# -- comparison strips -----------------------------------------------------------

# 5x7 bitmap glyphs (5-bit rows, MSB left) for metric captions
_FONT = {
    "0": (14, 17, 19, 21, 25, 17, 14), "1": (4, 12, 4, 4, 4, 4, 14),
    "2": (14, 17, 1, 2, 4, 8, 31), "3": (30, 1, 1, 14, 1, 1, 30),
    "4": (2, 6, 10, 18, 31, 2, 2), "5": (31, 16, 30, 1, 1, 17, 14),
    "6": (6, 8, 16, 30, 17, 17, 14), "7": (31, 1, 2, 4, 8, 8, 8),
    "8": (14, 17, 17, 14, 17, 17, 14), "9": (14, 17, 17, 15, 1, 2, 12),
    ".": (0, 0, 0, 0, 0, 12, 12), "=": (0, 0, 31, 0, 31, 0, 0),
    "-": (0, 0, 0, 31, 0, 0, 0), "+": (0, 4, 4, 31, 4, 4, 0),
    " ": (0, 0, 0, 0, 0, 0, 0), "/": (1, 1, 2, 4, 8, 16, 16),
    "S": (15, 16, 16, 14, 1, 1, 30), "I": (14, 4, 4, 4, 4, 4, 14),
    "M": (17, 27, 21, 21, 17, 17, 17), "P": (30, 17, 17, 30, 16, 16, 16),
    "N": (17, 25, 21, 19, 17, 17, 17), "R": (30, 17, 17, 30, 20, 18, 17),
    "D": (30, 17, 17, 17, 17, 17, 30), "B": (30, 17, 17, 30, 17, 17, 30),
    "A": (14, 17, 17, 31, 17, 17, 17), "E": (31, 16, 16, 30, 16, 16, 31),
    "G": (14, 17, 16, 23, 17, 17, 15), "L": (16, 16, 16, 16, 16, 16, 31),
    "T": (31, 4, 4, 4, 4, 4, 4), "F": (31, 16, 16, 30, 16, 16, 16),
}

_PANEL_GUTTER = 4
_FOOTER_H = 13


def _draw_text(canvas: np.ndarray, text: str, x: int, y: int):
    for ch in text.upper():
        glyph = _FONT.get(ch, _FONT[" "])
        for row, bits in enumerate(glyph):
            for col in range(5):
                if bits & (16 >> col) and 0 <= y + row < canvas.shape[0] and 0 <= x + col < canvas.shape[1]:
                    canvas[y + row, x + col] = 0.05
        x += 6


def render_comparison(images, caption: str = "", panel_height: int | None = None) -> ImageBuffer:
    """Horizontal strip of the given images with a caption footer.

    Panels are uniformly scaled to a common height; the caption is baked
    into a footer band, so identical inputs yield identical bytes.
    """
    if not images:
        raise ArgumentError("render_comparison needs at least one image")
    height = panel_height or max(img.height for img in images)
    panels = []
    for img in images:
        scale_w = max(1, round(img.width * height / img.height))
        rgb = img if img.channels == 3 else ImageBuffer(np.repeat(img.data, 3, axis=2))
        panels.append(resize(rgb, height, scale_w, "bilinear"))
    width = sum(p.width for p in panels) + _PANEL_GUTTER * (len(panels) - 1)
    canvas = np.ones((height + _FOOTER_H, width, 3), dtype=np.float32)
    x = 0
    for panel in panels:
        canvas[:height, x : x + panel.width] = panel.data
        x += panel.width + _PANEL_GUTTER
    _draw_text(canvas, caption, 2, height + 3)
    return ImageBuffer(canvas)


# -- helpers ------------------------------------------------------------------------


def _config_from_args(args) -> CliConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else CliConfig()
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
        cfg.degrade.seed = args.seed
    cfg.validate()
    return cfg


def _load_ckpt(path) -> pipeline.Checkpoint:
    return pipeline.Checkpoint.load(path)


def _write_report(report, out_dir: Path, stem: str = "report"):
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(report.to_json())
    report.write_csv(out_dir / f"{stem}.csv")
    return json_path


# -- subcommands ----------------------------------------------------------------------


def _cmd_synth(args) -> int:
    cfg = _config_from_args(args)
    lo = args.intensity[0]
    hi = args.intensity[1] if len(args.intensity) > 1 else lo
    manifest = build_dataset(
        args.count,
        args.out,
        size=(args.size, args.size),
        intensity_range=(lo, hi),
        root_seed=cfg.train.seed,
        base_config=cfg.degrade,
    )
    print(f"wrote {len(manifest.rows)} pairs and {manifest.path}")
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    rows = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.steps is not None:
        if args.phase == "gpp":
            cfg.train.steps_gpp = args.steps
        elif args.phase == "joint":
            cfg.train.steps_joint = args.steps
        else:
            cfg.train.steps_finetune = args.steps
    log_path = out_dir / f"{args.phase}_loss.csv"
    if args.phase == "gpp":
        ckpt = pipeline.pretrain_global(rows, cfg, log_path=log_path)
    elif args.phase == "joint":
        gpp = _load_ckpt(args.gpp or out_dir / "gpp.glpge")
        ckpt = pipeline.train_joint(rows, cfg, gpp, log_path=log_path)
    else:
        start = _load_ckpt(args.resume or out_dir / "joint.glpge")
        ckpt = pipeline.finetune(rows, cfg, start, log_path=log_path)
    path = out_dir / f"{args.phase}.glpge"
    ckpt.save(path)
    print(f"saved {path} (phase={args.phase}, step={ckpt.meta['step']})")
    return 0


def _cmd_enhance(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    enhancer = pipeline.Enhancer(ckpt, mode=args.mode, k_fast=args.k, stage_order=args.stage_order)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    source = Path(args.input)
    if source.suffix == ".csv":
        rows = load_manifest(source)
        jobs = [(Path(r["degraded"]), Path(r["clean"])) for r in rows]
    else:
        jobs = [(source, None)]
    for src, truth in jobs:
        img = load_image(src)
        out = enhancer(img)
        dest = out_dir / f"enhanced_{src.stem}.png"
        save_image(out, dest)
        if args.compare:
            panels = [img, out]
            caption = ""
            if truth is not None:
                gt = load_image(truth)
                panels.append(gt)
                caption = f"SSIM={ssim(out, gt):.4f} PSNR={psnr(out, gt):.2f}DB"
            strip = render_comparison(panels, caption)
            save_image(strip, out_dir / f"compare_{src.stem}.png")
    print(f"enhanced {len(jobs)} image(s) into {out_dir}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    enhancer = pipeline.Enhancer(ckpt, mode=args.mode, k_fast=args.k)
    rows = load_manifest(args.manifest)
    report = evaluate_pairs(rows, enhancer)
    path = _write_report(report, Path(args.out))
    print(f"evaluated {len(report.rows)} pairs: mean SSIM {report.mean_ssim:.4f}, "
          f"mean PSNR {report.mean_psnr:.2f} dB -> {path}")
    return 0


def _cmd_bench(args) -> int:
    ckpt = _load_ckpt(args.ckpt)
    sizes = [int(s) for s in args.sizes.split(",")]
    report = pipeline.bench(ckpt, sizes, k_fast=args.k)
    if args.compare_kernels:
        from .diffcore.kernels import compare_backends

        report["kernel_backends"] = compare_backends()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "bench.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True))
    for entry in report["sizes"]:
        print(f"{entry['side']}^2: flops {entry['flops_baseline'] / 1e9:.2f}G -> "
              f"{entry['flops_fast'] / 1e9:.2f}G, wall {entry['wall_baseline_s']:.3f}s -> "
              f"{entry['wall_fast_s']:.3f}s, coeff conv ratio {entry['coeff_conv_ratio']:.4f}")
    print(f"wrote {path}")
    return 0


_ABLATE_AXES = ("fusion", "stage", "losses", "refine")


def _cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    rows = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.train.steps_gpp = args.steps_gpp
    steps = args.steps

    def short_run(run_cfg, gpp_ckpt, weights=None):
        ckpt = pipeline.train_joint(rows, run_cfg, gpp_ckpt, steps=steps, force_weights=weights)
        enhancer = pipeline.Enhancer(ckpt, stage_order=run_cfg.train.stage_order)
        report = evaluate_pairs(rows, enhancer)
        return report.mean_ssim, report.mean_psnr

    table = []
    if args.axis == "fusion":
        header = ["fusion", "ssim", "psnr"]
        for label, strategy in (("Cascading", "cascading"), ("Additive", "additive"),
                                ("Concatenation", "concatenation")):
            run_cfg = _replace_train(cfg, fusion_strategy=strategy)
            gpp = pipeline.pretrain_global(rows, run_cfg)
            table.append([label, *short_run(run_cfg, gpp)])
    elif args.axis == "stage":
        header = ["integration", "ssim", "psnr"]
        gpp = pipeline.pretrain_global(rows, cfg)
        for label, order in (("Local + Global", "local_then_global"),
                             ("Global + Local", "global_then_local"),
                             ("Global", "global_only")):
            run_cfg = _replace_train(cfg, stage_order=order)
            table.append([label, *short_run(run_cfg, gpp)])
    elif args.axis == "losses":
        header = ["objective", "ssim_loss", "tv_loss", "ssim", "psnr"]
        gpp = pipeline.pretrain_global(rows, cfg)
        base = cfg.train.loss_weights
        for label, use_ssim, use_tv in (("L1", False, False), ("L1+SSIM", True, False),
                                        ("L1+SSIM+TV", True, True)):
            weights = LossWeights(base.l1, base.ssim if use_ssim else 0.0,
                                  base.tv if use_tv else 0.0, 0.0, base.coeff_smooth)
            s, p = short_run(cfg, gpp, weights)
            table.append([label, use_ssim, use_tv, s, p])
    elif args.axis == "refine":
        header = ["refine_mode", "ssim", "psnr"]
        gpp = pipeline.pretrain_global(rows, cfg)
        for mode in ("direct", "parametric"):
            run_cfg = _replace_train(cfg, refine_mode=mode)
            table.append([mode, *short_run(run_cfg, gpp)])
    else:
        raise ArgumentError(f"unknown ablation axis {args.axis!r}")

    path = out_dir / f"ablate_{args.axis}.csv"
    with open(path, "w", newline="") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(header)
        for row in table:
            writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    print(f"wrote {path} ({len(table)} rows)")
    return 0


def _replace_train(cfg: CliConfig, **kw) -> CliConfig:
    return dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **kw))


def _cmd_config(args) -> int:
    if args.action == "dump":
        print(dump_config(CliConfig()))
        return 0
    raise ArgumentError(f"unknown config action {args.action!r}")


# -- dispatch ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glpge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON config file (defaults otherwise)")
        p.add_argument("--seed", type=int, default=None, help="seed for all stochastic components")

    p = sub.add_parser("synth", help="render a synthetic degraded/clean corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--intensity", type=float, nargs="+", default=[0.5])
    common(p)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="run one training phase")
    p.add_argument("--phase", choices=("gpp", "joint", "finetune"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None, help="override the phase's step budget")
    p.add_argument("--gpp", default=None, help="global-stage checkpoint (joint phase)")
    p.add_argument("--resume", default=None, help="joint checkpoint (finetune phase)")
    common(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("enhance", help="enhance one image or a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="image file or manifest CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("baseline", "fast"), default="baseline")
    p.add_argument("--k", type=int, default=2, help="coefficient downsample factor in fast mode")
    p.add_argument("--stage-order", default=None,
                   choices=("global_then_local", "local_then_global", "global_only"))
    p.add_argument("--compare", action="store_true", help="also write comparison strips")
    p.set_defaults(fn=_cmd_enhance)

    p = sub.add_parser("eval", help="paired evaluation over a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("baseline", "fast"), default="baseline")
    p.add_argument("--k", type=int, default=2)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("bench", help="FLOPs and wall-time, baseline vs fast")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sizes", default="256,512")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--compare-kernels", action="store_true",
                   help="also benchmark the compiled vs NumPy conv kernels")
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("ablate", help="seeded short-run ablation tables")
    p.add_argument("--axis", choices=_ABLATE_AXES, required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=120, help="joint steps per table row")
    p.add_argument("--steps-gpp", type=int, default=60)
    common(p)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("config", help="configuration utilities")
    p.add_argument("action", choices=("dump",))
    p.set_defaults(fn=_cmd_config)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
