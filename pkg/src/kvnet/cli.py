"""Command-line surface: data generation, masking, training, evaluation,
parameter audits, and image export.

Exit codes (also listed in --help): 0 success, 2 usage error (argparse),
3 missing file, 4 bad file format/magic, 5 shape/config mismatch,
6 invalid value, 7 unexpected error.  Failures print one line to stderr
of the form ``error:<category>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys

import numpy as np

from .errors import FormatError, ShapeError
from .fourier import ComplexImage, ifft2c
from .metrics import append_metrics_csv, format_metrics_row, psnr, nmse, ssim
from .models import (ModelConfig, build_model, collect_params, count_params_closed_form,
                     count_params_instantiated, count_ratio, kvnet_conv_count,
                     load_checkpoint, restore_params)
from .sampling import Mask, apply_mask, generate_random_mask
from .training import PhantomSpec, TrainConfig, evaluate, make_phantom_dataset, train

_KSP_MAGIC = b"KSP1"

_EXIT_MISSING = 3
_EXIT_FORMAT = 4
_EXIT_SHAPE = 5
_EXIT_VALUE = 6
_EXIT_UNEXPECTED = 7

_EPILOG = """\
exit codes:
  0  success
  2  usage error (unknown flag / missing argument)
  3  missing input file
  4  bad file format or magic (KSP1 / MSK1 / CKPT / JSON config)
  5  shape or configuration mismatch
  6  invalid value
  7  unexpected internal error
"""


# -- KSP1 k-space container ---------------------------------------------------


def write_ksp(path, slices):
    """Write KSP1: magic, u32 n/F/P, then per-slice row-major (re, im) f32 pairs."""
    slices = list(slices)
    f, p = slices[0].shape
    with open(path, "wb") as fh:
        fh.write(_KSP_MAGIC)
        fh.write(struct.pack("<III", len(slices), f, p))
        for img in slices:
            if img.shape != (f, p):
                raise ShapeError(f"KSP1 slices must share a shape; got {img.shape} vs {(f, p)}")
            inter = np.empty((f, p, 2), dtype="<f4")
            inter[..., 0] = img.re
            inter[..., 1] = img.im
            fh.write(inter.tobytes())


def read_ksp(path, domain="kspace"):
    """Read a KSP1 file into a list of ComplexImage slices."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _KSP_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {_KSP_MAGIC!r}")
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated KSP1 header")
    n, f, p = struct.unpack("<III", blob[4:16])
    expected = 16 + 8 * n * f * p
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n}x{f}x{p}, got {len(blob)}")
    flat = np.frombuffer(blob[16:], dtype="<f4").reshape(n, f, p, 2)
    return [ComplexImage(flat[i, ..., 0].astype(np.float64),
                         flat[i, ..., 1].astype(np.float64), domain) for i in range(n)]


# -- PGM export ---------------------------------------------------------------


def write_pgm(path, image):
    """8-bit binary PGM (P5, maxval 255), normalized by the slice maximum."""
    arr = np.asarray(image, dtype=np.float64)
    peak = arr.max()
    if peak <= 0:
        pixels = np.zeros(arr.shape, dtype=np.uint8)
    else:
        pixels = np.clip(np.rint(255.0 * arr / peak), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())


def export_outputs(images, out_dir, stem="slice"):
    """Write one normalized PGM per magnitude slice; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        path = os.path.join(out_dir, f"{stem}_{i:04d}.pgm")
        write_pgm(path, img)
        paths.append(path)
    return paths


# -- subcommands --------------------------------------------------------------


def _cmd_phantom(args):
    spec = PhantomSpec(size=args.size, seed=args.seed)
    data = make_phantom_dataset(spec, args.n)
    write_ksp(args.out, [k for _, k in data])
    print(f"wrote {args.n} slices of {args.size}x{args.size} k-space to {args.out}")
    return 0


def _cmd_mask(args):
    mask = generate_random_mask(args.p, args.center_frac, args.accel, args.seed)
    mask.save(args.out)
    if mask.warning:
        print(f"warning: {mask.warning}", file=sys.stderr)
    print(f"wrote mask of {len(mask)} lines ({mask.n_sampled} sampled) to {args.out}")
    return 0


def _cmd_zerofill(args):
    slices = read_ksp(args.ksp)
    mask = Mask.load(args.mask)
    recons, rows = [], []
    for k_full in slices:
        zf = ifft2c(apply_mask(k_full, mask))
        recons.append(zf.magnitude())
    export_outputs(recons, args.out_pgm, stem="zerofill")
    if args.csv:
        n_list, p_list, s_list = [], [], []
        for k_full, recon in zip(slices, recons):
            truth = ifft2c(k_full).magnitude()
            dr = float(truth.max())
            n_list.append(nmse(recon, truth))
            p_list.append(psnr(recon, truth, dr))
            s_list.append(float(ssim(recon, truth, dr).data))
        mean_ssim = float(np.mean(s_list))
        append_metrics_csv(args.csv, [format_metrics_row(
            0, "zerofill", float(np.mean(n_list)), float(np.mean(p_list)),
            mean_ssim, 1.0 - mean_ssim)])
    print(f"wrote {len(recons)} zero-filled PGM slices to {args.out_pgm}")
    return 0


def _load_json_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON config: {exc}") from exc


def _cmd_train(args):
    raw = _load_json_config(args.config)
    model_cfg = ModelConfig.from_dict(raw.get("model", {}))
    train_cfg = TrainConfig.from_dict(raw.get("train", {}))
    arch = raw.get("model", {}).get("arch", "kvnet")

    train_slices = read_ksp(args.train)
    val_slices = read_ksp(args.val)
    train_set = [(ifft2c(k), k) for k in train_slices]
    val_set = [(ifft2c(k), k) for k in val_slices]

    model = build_model(arch, model_cfg, seed=train_cfg.seed)
    history = train(model, train_set, val_set, train_cfg, out_dir=args.out)
    last = history.records[-1]
    print(f"trained {arch} for {train_cfg.epochs} epochs; "
          f"final val ssim {last.val.ssim:.4f} (best {history.best_val_ssim:.4f} "
          f"at epoch {history.best_epoch}); outputs in {args.out}")
    return 0


def _cmd_eval(args):
    ckpt = load_checkpoint(args.ckpt)
    if ckpt.config is None or ckpt.arch is None:
        raise FormatError(f"{args.ckpt}: checkpoint carries no model config")
    model = build_model(ckpt.arch, ModelConfig.from_dict(ckpt.config))
    restore_params(collect_params(model), ckpt.model_arrays())

    slices = read_ksp(args.data)
    mask = Mask.load(args.mask)
    dataset = [(ifft2c(k), k) for k in slices]
    report = evaluate(model, dataset, mask)
    append_metrics_csv(args.csv, [format_metrics_row(
        ckpt.epoch, "eval", report.nmse, report.psnr, report.ssim, 1.0 - report.ssim)])
    print(f"eval over {report.n_slices} slices: nmse {report.nmse:.6f} "
          f"psnr {report.psnr:.2f} ssim {report.ssim:.4f}")
    return 0


def _cmd_params(args):
    arch = args.arch
    cfg = ModelConfig(
        c_v=args.c, c_k=args.ck if args.ck is not None else max(2, args.c),
        levels=args.L, blocks=args.T if args.T is not None else 1,
    )
    if arch == "kvnet":
        closed = kvnet_conv_count(cfg.c_v, cfg.c_k, cfg.levels, cfg.blocks)
        print(f"arch=kvnet c_v={cfg.c_v} c_k={cfg.c_k} L={cfg.levels} T={cfg.blocks}")
    else:
        closed = count_params_closed_form(arch, args.c if arch != "knet" else cfg.c_k, args.L)
        print(f"arch={arch} c={args.c if arch != 'knet' else cfg.c_k} L={args.L}")
    model = build_model(arch, cfg, init="zeros")
    inst_conv = count_params_instantiated(model, "conv_only")
    inst_all = count_params_instantiated(model, "all")
    print(f"closed_form={closed}")
    print(f"instantiated_conv_only={inst_conv}")
    print(f"instantiated_all={inst_all}")
    if arch in ("vnet", "unet"):
        print(f"r={count_ratio(args.c, args.L):.4f}")
    if closed != inst_conv:
        raise ShapeError(f"closed-form count {closed} != instantiated {inst_conv}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kvnet",
        description="Dual-domain MRI reconstruction toolkit (desk scale).",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate phantom k-space slices into a KSP1 file")
    p.add_argument("--n", type=int, required=True, help="number of slices")
    p.add_argument("--size", type=int, default=64, help="square image size (default 64)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--out", required=True, help="output .ksp path")
    p.set_defaults(fn=_cmd_phantom)

    p = sub.add_parser("mask", help="generate a Cartesian undersampling mask (MSK1)")
    p.add_argument("--p", type=int, required=True, help="number of phase-encode lines")
    p.add_argument("--accel", type=float, default=4.0, help="acceleration factor (default 4)")
    p.add_argument("--center-frac", type=float, default=0.08,
                   help="fully-sampled center fraction (default 0.08)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--out", required=True, help="output .msk path")
    p.set_defaults(fn=_cmd_mask)

    p = sub.add_parser("zerofill", help="zero-filled reconstructions as PGM images")
    p.add_argument("--ksp", required=True, help="input KSP1 file (full k-space)")
    p.add_argument("--mask", required=True, help="input MSK1 mask")
    p.add_argument("--out-pgm", required=True, help="output directory for PGM slices")
    p.add_argument("--csv", help="append averaged metrics vs the fully-sampled truth")
    p.set_defaults(fn=_cmd_zerofill)

    p = sub.add_parser("train", help="train a model on KSP1 data")
    p.add_argument("--train", required=True, help="training KSP1 file")
    p.add_argument("--val", required=True, help="validation KSP1 file")
    p.add_argument("--config", required=True,
                   help='JSON config {"model": {...}, "train": {...}}')
    p.add_argument("--out", required=True, help="output directory (csv, checkpoints, masks)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on KSP1 data")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="KSP1 file with full k-space")
    p.add_argument("--mask", required=True, help="MSK1 mask applied to every slice")
    p.add_argument("--csv", required=True, help="metrics CSV to append to")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("params", help="closed-form and instantiated parameter counts")
    p.add_argument("--arch", required=True, choices=["vnet", "unet", "knet", "kvnet"],
                   help="architecture to audit")
    p.add_argument("--c", type=int, required=True, help="entry channels (c_v for kvnet)")
    p.add_argument("--L", type=int, required=True, help="encoder levels")
    p.add_argument("--T", type=int, help="cascade length (kvnet)")
    p.add_argument("--ck", type=int, help="frequency-branch entry channels (knet/kvnet)")
    p.set_defaults(fn=_cmd_params)

    return parser


def run_command(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error:missing-file: {exc}", file=sys.stderr)
        return _EXIT_MISSING
    except FormatError as exc:
        print(f"error:bad-format: {exc}", file=sys.stderr)
        return _EXIT_FORMAT
    except ShapeError as exc:
        print(f"error:shape-mismatch: {exc}", file=sys.stderr)
        return _EXIT_SHAPE
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error:invalid-value: {exc}", file=sys.stderr)
        return _EXIT_VALUE
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error:unexpected: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _EXIT_UNEXPECTED


def main():
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
