"""Command line interface: run one matcher on one image pair.

Exit code 0 on success; 1 with a diagnostic on stderr for adapter
errors (missing weights, unreadable images, bad configuration); 2 for
command line usage errors.
"""

from __future__ import annotations

import argparse
import sys

from .adapter import run_adapter
from .errors import AdapterError
from .spec import ROSTER, AdapterSpec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adapter",
        description="Run a pretrained matcher on an image pair and write "
                    "the neutral match CSV.")
    parser.add_argument("--method", required=True, choices=ROSTER,
                        help="matcher to run")
    parser.add_argument("--a", required=True, metavar="IMG1",
                        help="first image (queries are taken here)")
    parser.add_argument("--b", required=True, metavar="IMG2",
                        help="second image")
    parser.add_argument("--out", required=True, metavar="CSV",
                        help="output match file")
    parser.add_argument("--tile", type=int, default=1024,
                        help="tile size for large images (default 1024)")
    parser.add_argument("--weights", default=None,
                        help="explicit checkpoint path")
    parser.add_argument("--score-threshold", type=float, default=0.0,
                        help="drop matches scoring below this (default 0)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = AdapterSpec(method=args.method, weights=args.weights,
                           tile=args.tile, score_threshold=args.score_threshold)
        count = run_adapter(spec, args.a, args.b, args.out)
    except AdapterError as exc:
        print(f"adapter: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {count} matches to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
