"""Command-line interface.

Subcommands cover the whole pipeline: synth, train-ae-image, train-ae-mesh,
train-ef, train-mapping, infer, eval, report.  Exit codes: 0 success,
1 usage/configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, apply_overrides, default_config, load_config


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--run-dir", required=True, help="run directory for all artifacts")
    sub.add_argument("--config", help="INI config file (defaults used when omitted)")
    sub.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config entry (repeatable)",
    )


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else default_config()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return apply_overrides(config, overrides)


def build_parser() -> _Parser:
    parser = _Parser(prog="cine2mesh", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate cohort, render cine pools, write manifest")
    _add_common(synth)
    synth.add_argument("--count", type=int, help="cohort size (shorthand for cohort.count)")
    synth.add_argument("--seed", type=int, help="cohort seed (shorthand for cohort.seed)")

    for name, help_text in (
        ("train-ae-mesh", "train the mesh autoencoder on the mesh pool"),
        ("train-ef", "train the EF predictor on frozen mesh codes"),
    ):
        stage = sub.add_parser(name, help=help_text)
        _add_common(stage)

    for name, help_text in (
        ("train-ae-image", "train the image autoencoder on the image pool"),
        ("train-mapping", "train the latent cycle mapping"),
    ):
        stage = sub.add_parser(name, help=help_text)
        _add_common(stage)
        stage.add_argument(
            "--views",
            default="lax+sax",
            choices=("lax+sax", "lax"),
            help="view configuration",
        )

    infer = sub.add_parser("infer", help="reconstruct a mesh video for one sample")
    _add_common(infer)
    infer.add_argument("--sample", type=int, required=True, help="cohort sample index")
    infer.add_argument("--out", required=True, help="output directory for mesh frames")
    infer.add_argument("--views", default="lax+sax", choices=("lax+sax", "lax"))
    infer.add_argument("--frames", type=int, help="output frame count (default: input count)")

    ev = sub.add_parser("eval", help="evaluate test samples for all configured views")
    _add_common(ev)

    rep = sub.add_parser("report", help="emit tables, scatter data, curves, and plots")
    _add_common(rep)

    return parser


def _dispatch(args) -> None:
    from . import pipeline

    config = _resolve_config(args)
    run_dir = Path(args.run_dir)
    if args.command == "synth":
        if args.count is not None:
            config.cohort.count = args.count
        if args.seed is not None:
            config.cohort.seed = args.seed
        pipeline.synth_run(run_dir, config)
        print(f"cohort of {config.cohort.count} written to {run_dir}")
    elif args.command == "train-ae-image":
        path = pipeline.train_image_stage(run_dir, config, args.views)
        print(f"image autoencoder saved: {path}")
    elif args.command == "train-ae-mesh":
        path = pipeline.train_mesh_stage(run_dir, config)
        print(f"mesh autoencoder saved: {path}")
    elif args.command == "train-ef":
        path = pipeline.train_ef_stage(run_dir, config)
        print(f"EF predictor saved: {path}")
    elif args.command == "train-mapping":
        path = pipeline.train_mapping_stage(run_dir, config, args.views)
        print(f"mapping saved: {path}")
    elif args.command == "infer":
        out = pipeline.infer_stage(
            run_dir, config, args.sample, args.out, view_config=args.views, n_frames=args.frames
        )
        print(f"mesh video written to {out}")
    elif args.command == "eval":
        path = pipeline.eval_stage(run_dir, config)
        print(f"evaluation results: {path}")
    elif args.command == "report":
        path = pipeline.report_stage(run_dir, config)
        print(f"report written to {path}")
    else:  # pragma: no cover - argparse enforces the choices
        raise UsageError(f"unknown command {args.command}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _dispatch(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
