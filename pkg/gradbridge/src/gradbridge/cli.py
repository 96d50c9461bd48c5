"""Command line for the metric bridge.

    gradbridge export-gradients --metrics contrastnet,edgecoherence \\
        --sigma 0.01 --samples 5 --seed 7 --outdir out IMG...
    gradbridge export-scores --metrics contrastnet --outdir out IMG...
"""

from __future__ import annotations

import argparse
import sys

from .bridge import BridgeJob, export_gradients, export_scores
from .zoo import BUILTIN_METRICS


def _job_from_args(args) -> BridgeJob:
    return BridgeJob(
        images=tuple(args.images),
        metrics=tuple(m for m in args.metrics.split(",") if m),
        out_dir=args.outdir,
        sigma=args.sigma,
        samples=args.samples,
        seed=args.seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradbridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("export-gradients", "export-scores"):
        p = sub.add_parser(name)
        p.add_argument("images", nargs="+", metavar="IMG")
        p.add_argument("--metrics", required=True,
                       help=f"comma-separated; built-ins: {', '.join(BUILTIN_METRICS)}")
        p.add_argument("--outdir", required=True)
        p.add_argument("--sigma", type=float, default=0.0,
                       help="smoothing noise std (0 disables smoothing)")
        p.add_argument("--samples", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = _job_from_args(args)
        if args.command == "export-gradients":
            for path in export_gradients(job):
                print(path)
        else:
            print(export_scores(job))
    except (KeyError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
