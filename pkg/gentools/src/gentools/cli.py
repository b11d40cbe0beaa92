"""Command line: export-toy emits a seeded torch toy checkpoint (and
dataset) in the shared container format; crosscheck validates the
engine's forward pass against torch."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__, crosscheck, torchvit


def cmd_export_toy(args) -> int:
    if args.config not in torchvit.PRESETS:
        print(f"error: unknown config preset {args.config!r}; choose from "
              f"{sorted(torchvit.PRESETS)}", file=sys.stderr)
        return 1
    config = torchvit.PRESETS[args.config]
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    model_path = outdir / "model.vtft"
    model = torchvit.export_toy_model(config, args.seed, model_path,
                                      weight_scale=args.weight_scale,
                                      train_steps=args.train_steps)
    data_path = outdir / "dataset.vtft"
    torchvit.export_dataset(config, args.images, args.data_seed, data_path)
    params = sum(p.numel() for p in model.parameters())
    print(f"config={args.config} params={params} images={args.images}")
    print(f"checkpoint={model_path}")
    print(f"dataset={data_path}")
    return 0


def cmd_crosscheck(args) -> int:
    report = crosscheck.crosscheck_forward(args.checkpoint, args.dataset,
                                           tolerance=args.tolerance)
    print(report.summary())
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gentools",
        description="Reference toolchain for the vitfault engine.")
    p.add_argument("--version", action="version", version=f"gentools {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("export-toy", help="emit a seeded torch toy checkpoint "
                                           "and synthetic dataset")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--config", default="toy-tiny")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--data-seed", type=int, default=1)
    sp.add_argument("--images", type=int, default=8)
    sp.add_argument("--weight-scale", type=float, default=0.02)
    sp.add_argument("--train-steps", type=int, default=0,
                    help="optional supervised steps on a synthetic separable task")
    sp.set_defaults(func=cmd_export_toy)

    sp = sub.add_parser("crosscheck", help="compare engine logits against torch")
    sp.add_argument("checkpoint")
    sp.add_argument("dataset")
    sp.add_argument("--tolerance", type=float, default=crosscheck.DEFAULT_TOLERANCE)
    sp.set_defaults(func=cmd_crosscheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
