"""Command-line entry point.

    extract --images <dir> --out <file> --scales 3 --patch 128 --stride 32

Exit codes: 0 success, 2 bad arguments or unusable dataset directory,
3 model-load failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, ModelLoadError
from .extract import extract_dataset
from .model import load_model
from .sampling import SamplingSpec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract",
        description="sample image patches on a fixed grid and write their "
        "feature vectors to a patch-feature file",
    )
    parser.add_argument("--images", required=True, help="dataset directory")
    parser.add_argument("--out", required=True, help="output feature file")
    parser.add_argument(
        "--scales", type=int, default=3, help="number of patch scales"
    )
    parser.add_argument("--patch", type=int, default=128, help="patch size")
    parser.add_argument("--stride", type=int, default=32, help="grid stride")
    parser.add_argument(
        "--resize",
        type=int,
        default=256,
        help="smaller-side target at the first scale",
    )
    parser.add_argument(
        "--weights",
        default=None,
        help="projection weights (.npz); omitted = seeded fallback network",
    )
    parser.add_argument(
        "--seed", type=int, default=0, help="fallback-network seed"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    args = build_parser().parse_args(argv)
    spec = SamplingSpec(
        resize_to=args.resize,
        patch=args.patch,
        stride=args.stride,
        n_scales=args.scales,
    )
    try:
        spec.validate()
        model = load_model(args.weights, seed=args.seed)
        summary = extract_dataset(args.images, args.out, spec, model)
    except ModelLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(
        f"extract: {summary['records']} patches from {summary['images']} "
        f"images at {summary['scales']} scales, D={summary['dimension']} "
        f"-> {args.out}"
    )
    if summary["skipped"]:
        print(f"extract: skipped {len(summary['skipped'])} unreadable images")
    return 0


def entry() -> None:
    sys.exit(main())
