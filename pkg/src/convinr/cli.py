"""Command-line front end: fit, fuse, eval, spectrum.

Exit codes: 0 success, 2 invalid configuration or unreadable input,
3 training diverged (non-finite loss), 4 equivalence/validity failure
(fusion certification or a resolution-locked model at the wrong size).

Configuration precedence: command-line flags override config-file keys,
which override the profile defaults. The effective configuration is echoed
into report.txt.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .io import FormatError, load_checkpoint, load_image, save_checkpoint, \
    save_image, write_csv
from .models import LockedShapeError, ModelSpec, make_coordinate_grid
from .reparam import fuse_model
from .spectrum import image_spectrum_profile
from .training import NonFiniteLossError, TrainConfig, fit, psnr, render

PROFILES = {
    "desk": {"depth": 6, "width": 32, "iters": 2000, "crop": 128},
    "paper": {"depth": 10, "width": 32, "iters": 100000, "crop": 0},
}

_FIT_KEYS = {
    "family": str, "depth": int, "width": int, "kernel": int,
    "decoration": str, "pe_octaves": int, "omega0": float,
    "iters": int, "lr": float, "seed": int, "log_every": int,
    "precision": int, "crop": int, "hf_cutoff": float,
}

_BASE = {
    "family": "conv-inr", "kernel": 0, "decoration": "none",
    "pe_octaves": 10, "omega0": 30.0, "lr": 2e-4, "seed": 0,
    "log_every": 100, "precision": 32, "hf_cutoff": 0.25,
}


def _read_config_file(path: str) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIT_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _FIT_KEYS[key](val)
    return values


def _effective_config(args) -> dict:
    cfg = dict(_BASE)
    cfg.update(PROFILES[args.profile])
    if getattr(args, "config", None):
        cfg.update(_read_config_file(args.config))
    for key in _FIT_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w, _ = img.shape
    if size <= 0:
        return img
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than the requested "
                         f"{size}x{size} crop")
    i0 = (h - size) // 2
    j0 = (w - size) // 2
    return np.ascontiguousarray(img[i0:i0 + size, j0:j0 + size])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "inf" if np.isinf(v) else f"{v!r}"
    return str(v)


def _write_report(path: Path, entries: dict) -> None:
    with open(path, "w") as f:
        for key in sorted(entries):
            f.write(f"{key}={_fmt(entries[key])}\n")


def cmd_fit(args) -> int:
    try:
        cfg = _effective_config(args)
        image = load_image(args.image)
        image = _center_crop(image, cfg["crop"])
        spec = ModelSpec(
            family=cfg["family"], depth=cfg["depth"], width=cfg["width"],
            kernel=cfg["kernel"] or None, decoration=cfg["decoration"],
            pe_octaves=cfg["pe_octaves"], omega0=cfg["omega0"],
            out_channels=image.shape[2])
        train_cfg = TrainConfig(
            iterations=cfg["iters"], lr=cfg["lr"], seed=cfg["seed"],
            log_every=cfg["log_every"], precision=cfg["precision"])
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cfg["kernel"] = spec.kernel
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        model, report = fit(spec, image, train_cfg)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    save_checkpoint(model, out / "checkpoint.inrc")
    grid = make_coordinate_grid(image.shape[0], image.shape[1], model.dtype)
    save_image(render(model, grid), out / "recon.png")
    write_csv(out / "loss.csv", ["iteration", "loss"],
              [(it, repr(loss)) for it, loss in report.loss_history])
    entries = {f"config.{k}": v for k, v in cfg.items()}
    entries.update({
        "image": str(args.image),
        "final_loss": report.final_loss,
        "final_psnr_db": report.final_psnr,
        "param_count": report.param_count,
        "stats_captured": report.stats_captured,
        "wall_time_s": report.wall_time_s,
    })
    _write_report(out / "report.txt", entries)
    print(f"fit: psnr={report.final_psnr:.2f} dB, params={report.param_count}, "
          f"outputs in {out}/")
    return 0


def cmd_fuse(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if all(b.decoration == "none" for b in model.blocks):
        print("notice: checkpoint is already undecorated; nothing to fuse")
        return 0
    grid = None
    if any(b.decoration == "dr" for b in model.blocks):
        if model.train_shape is None:
            print("error: checkpoint lacks a training grid shape; "
                  "dynamic fusion is undefined", file=sys.stderr)
            return 2
        grid = make_coordinate_grid(*model.train_shape, model.dtype)
    try:
        fused, report = fuse_model(model, grid)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    tolerance = args.tolerance if args.tolerance is not None else \
        (1e-4 if model.precision == 32 else 1e-9)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "fusion_report.txt", "w") as f:
        f.write(report.as_text())
        f.write(f"tolerance={tolerance:.3e}\n")
    if report.max_deviation > tolerance:
        print(f"error: fusion deviation {report.max_deviation:.3e} exceeds "
              f"tolerance {tolerance:.3e}", file=sys.stderr)
        return 4
    save_checkpoint(fused, out / "fused.inrc")
    print(f"fuse: {report.pass_name} pass, max deviation "
          f"{report.max_deviation:.3e}, params {report.params_before} -> "
          f"{report.params_after}, outputs in {out}/")
    return 0


def cmd_eval(args) -> int:
    try:
        model = load_checkpoint(args.checkpoint)
        image = load_image(args.image)
        if args.crop:
            image = _center_crop(image, args.crop)
    except (FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    grid = make_coordinate_grid(image.shape[0], image.shape[1], model.dtype)
    try:
        recon = render(model, grid)
    except LockedShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    if recon.shape != image.shape:
        print(f"error: model renders {recon.shape[2]} channels, reference has "
              f"{image.shape[2]}", file=sys.stderr)
        return 2
    value = psnr(recon, image.astype(recon.dtype))
    print(f"psnr={'inf' if np.isinf(value) else f'{value:.4f}'} dB")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        save_image(recon, out / "recon.png")
    return 0


def cmd_spectrum(args) -> int:
    rows = []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.images:
        try:
            image = load_image(path)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        side = 1 << int(np.log2(min(image.shape[0], image.shape[1])))
        if side < 32:
            print(f"error: {path}: image must be at least 32x32", file=sys.stderr)
            return 2
        crop = _center_crop(image, side)
        profile = image_spectrum_profile(crop, n_bins=args.bins,
                                         hf_cutoff=args.hf_cutoff)
        stem = Path(path).stem
        write_csv(out / f"{stem}_spectrum.csv",
                  ["bin", "radius", "mean_energy", "count"],
                  [(i, repr((i + 0.5) / profile.n_bins), repr(float(e)), int(c))
                   for i, (e, c) in enumerate(zip(profile.radial_energy,
                                                  profile.bin_counts))])
        rows.append((stem, profile.hf_ratio))
    width = max(len(name) for name, _ in rows)
    print(f"{'image'.ljust(width)}  hf_ratio (cutoff {args.hf_cutoff})")
    for name, hf in rows:
        print(f"{name.ljust(width)}  {hf:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convinr",
        description="Fit coordinate networks to images, fuse reparameterized "
                    "checkpoints, and analyze spectra.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to an image")
    p_fit.add_argument("--image", required=True, help="target PNG")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p_fit.add_argument("--config", help="flat key=value config file")
    p_fit.add_argument("--family", choices=["mlp", "pe-mlp", "siren", "conv-inr"])
    p_fit.add_argument("--depth", type=int)
    p_fit.add_argument("--width", type=int)
    p_fit.add_argument("--kernel", type=int)
    p_fit.add_argument("--decoration", choices=["none", "sr", "wr", "dr"])
    p_fit.add_argument("--pe-octaves", dest="pe_octaves", type=int)
    p_fit.add_argument("--omega0", type=float)
    p_fit.add_argument("--iters", type=int)
    p_fit.add_argument("--lr", type=float)
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--log-every", dest="log_every", type=int)
    p_fit.add_argument("--precision", type=int, choices=[32, 64])
    p_fit.add_argument("--crop", type=int, help="center-crop size (0 = full image)")
    p_fit.set_defaults(func=cmd_fit)

    p_fuse = sub.add_parser("fuse", help="fold decorations into plain kernels")
    p_fuse.add_argument("--checkpoint", required=True)
    p_fuse.add_argument("--out", required=True)
    p_fuse.add_argument("--tolerance", type=float,
                        help="max allowed deviation (default 1e-4 / 1e-9 by precision)")
    p_fuse.set_defaults(func=cmd_fuse)

    p_eval = sub.add_parser("eval", help="render a checkpoint and report PSNR")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--image", required=True, help="reference PNG")
    p_eval.add_argument("--crop", type=int, default=0)
    p_eval.add_argument("--out", help="optional directory for recon.png")
    p_eval.set_defaults(func=cmd_eval)

    p_spec = sub.add_parser("spectrum", help="radial spectrum profiles for images")
    p_spec.add_argument("--images", nargs="+", required=True)
    p_spec.add_argument("--out", required=True)
    p_spec.add_argument("--bins", type=int, default=32)
    p_spec.add_argument("--hf-cutoff", dest="hf_cutoff", type=float, default=0.25)
    p_spec.set_defaults(func=cmd_spectrum)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
