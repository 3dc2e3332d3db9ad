"""Command-line front end.

Subcommands: train, eval, infer, degrade, analyze-gates, analyze-spectrum.
Success exits 0; any failure prints one line, ``error: <message>``, to
stderr and exits 1.
"""

from __future__ import annotations

import argparse
import glob
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .config import load_config
from .metrics import gate_weight_norms, spectral_density, write_density_tsv, write_gate_norms_tsv
from .pipeline import (
    DegradationSpec,
    apply_degradation,
    load_patchset,
    load_pgm,
    save_patchset,
    save_pgm,
)
from .train import evaluate, infer_image, infer_intermediates, run_training, training_patches


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse's default error path prints usage and exits 2; funnel it
    # through the one-line error contract instead
    def error(self, message):
        raise CliError(message)


def _load_images(directory: str) -> tuple[list[np.ndarray], list[str]]:
    if not directory:
        raise CliError("no image directory given")
    paths = sorted(glob.glob(os.path.join(directory, "*.pgm")))
    if not paths:
        raise CliError(f"no .pgm images in {directory}")
    names = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    return [load_pgm(p) for p in paths], names


def _add_spec_args(sub) -> None:
    sub.add_argument("--kind", required=True, choices=("denoise", "super_resolve", "jpeg"))
    sub.add_argument("--sigma", type=float)
    sub.add_argument("--scale", type=int)
    sub.add_argument("--quality", type=int)


def _spec_from_args(args) -> DegradationSpec:
    given = {"sigma": args.sigma, "scale": args.scale, "quality": args.quality}
    needed = {"denoise": "sigma", "super_resolve": "scale", "jpeg": "quality"}[args.kind]
    if given[needed] is None:
        raise CliError(f"--kind {args.kind} requires --{needed}")
    extras = [k for k, v in given.items() if v is not None and k != needed]
    if extras:
        raise CliError(f"--{extras[0]} does not apply to --kind {args.kind}")
    try:
        return DegradationSpec(args.kind, **{needed: given[needed]})
    except ValueError as err:
        raise CliError(str(err)) from err


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.cache and os.path.exists(args.cache):
        patches = load_patchset(args.cache)
    else:
        train_dir = args.train_dir or cfg.train_dir
        images, _ = _load_images(train_dir)
        patches = training_patches(cfg, images)
        if args.cache:
            save_patchset(patches, args.cache)

    ckpt_dir = args.checkpoint_dir or cfg.checkpoint or cfg.output_dir or "."
    os.makedirs(ckpt_dir, exist_ok=True)
    log_path = args.log
    if log_path is None:
        log_path = os.path.join(cfg.output_dir or ckpt_dir, "loss_log.csv")
    os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)

    last_epoch = [0]

    def progress(iteration, epoch, lr, loss):
        if epoch != last_epoch[0]:
            print(f"epoch {epoch}/{cfg.train.epochs} lr {lr!r} first-batch loss {loss:.6e}")
            last_epoch[0] = epoch

    _, history = run_training(
        cfg, patches, log_path=log_path, checkpoint_dir=ckpt_dir,
        resume_from=args.resume, max_iterations=args.max_iterations,
        progress=progress)
    it, epoch, _, loss = history[-1]
    print(f"trained {len(patches)} patches to epoch {epoch} "
          f"({it} iterations), final loss {loss:.6e}")
    print(f"checkpoints in {ckpt_dir}, loss log {log_path}")
    return 0


def cmd_eval(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    spec = _spec_from_args(args)
    images, names = _load_images(args.test_dir)
    shave = args.shave
    if shave is None:
        shave = spec.scale if spec.kind == "super_resolve" else 0
    report = evaluate(images, spec, args.seed,
                      net=None if args.baseline else net,
                      shave=shave, names=names)
    for name, p, s in report.rows:
        print(f"{name} psnr {p:.4f} ssim {s:.6f}")
    print(f"average psnr {report.avg_psnr:.4f} ssim {report.avg_ssim:.6f}")
    if args.output:
        report.write_csv(args.output)
        print(f"wrote {args.output}")
    return 0


def cmd_infer(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    img = load_pgm(args.input)
    save_pgm(infer_image(net, img), args.output)
    print(f"wrote {args.output}")
    if args.emit_intermediate:
        stem, ext = os.path.splitext(args.output)
        for m, pred in enumerate(infer_intermediates(net, img), start=1):
            path = f"{stem}_block{m:02d}{ext}"
            save_pgm(pred, path)
            print(f"wrote {path}")
    return 0


def cmd_degrade(args) -> int:
    spec = _spec_from_args(args)
    img = load_pgm(args.input)
    degraded, _ = apply_degradation(img, spec, np.random.default_rng(args.seed))
    save_pgm(degraded, args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_analyze_gates(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    report = gate_weight_norms(net)
    write_gate_norms_tsv(report, args.output)
    print(f"wrote {args.output}")
    print(f"long_term_mean {report.long_term_mean!r} "
          f"short_early_mean {report.short_early_mean!r} "
          f"short_last_mean {report.short_last_mean!r}")
    return 0


def cmd_analyze_spectrum(args) -> int:
    densities = {}
    for path in args.images:
        name = os.path.splitext(os.path.basename(path))[0]
        if name in densities:
            raise CliError(f"duplicate image name {name}")
        densities[name] = spectral_density(load_pgm(path), num_bins=args.bins)
    write_density_tsv(densities, args.output)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="memnet", description="image restoration with memory networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--train-dir", help="override paths.train_dir")
    p.add_argument("--checkpoint-dir", help="override paths.checkpoint")
    p.add_argument("--log", help="loss log path (default <output_dir>/loss_log.csv)")
    p.add_argument("--cache", help="patch cache file; reused when present")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--max-iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-dir", required=True)
    _add_spec_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shave", type=int, help="border crop; defaults to scale for SR, else 0")
    p.add_argument("--baseline", action="store_true",
                   help="score the degraded inputs instead of restorations")
    p.add_argument("--output", help="write the per-image CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="restore one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--emit-intermediate", action="store_true",
                   help="also write every per-block prediction")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("degrade", help="corrupt one image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_spec_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("analyze-gates", help="gate weight-norm curves as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_analyze_gates)

    p = sub.add_parser("analyze-spectrum", help="radial power density of images as TSV")
    p.add_argument("--output", required=True)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_analyze_spectrum)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
