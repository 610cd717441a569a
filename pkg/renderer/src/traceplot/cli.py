"""Command line front end: expand the glob, render, report what was drawn."""

import argparse
import glob as globlib
import sys
from pathlib import Path

from .render import PlotSpec, SchemaError, render


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="render",
        description="Render optimizer trace CSVs into per-model "
        "log-log convergence figures.",
    )
    parser.add_argument(
        "--traces", required=True, help="glob matching trace CSV files"
    )
    parser.add_argument(
        "--out", required=True, help="directory the figures are written to"
    )
    parser.add_argument("--format", choices=("png", "svg"), default="png")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    paths = sorted(globlib.glob(args.traces))
    try:
        spec = PlotSpec(
            traces=tuple(Path(p) for p in paths),
            out_dir=Path(args.out),
            fmt=args.format,
        )
        figures = render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for figure in figures:
        methods = ", ".join(figure.legend)
        print(f"{figure.path} ({figure.n_series} series; {methods})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
