"""Command line entry: render figures from run directories.

    plot curves --runs 'runs/dense/seed*' --metric success_rate --out curves.png
    plot bias --runs 'label_a=runs/a/seed*' --runs 'label_b=runs/b/seed*' --out bias.png

Each --runs value is GLOB or LABEL=GLOB; the glob matches run directories
(containing metrics.csv) or CSV files directly.
"""

from __future__ import annotations

import argparse
import sys

import matplotlib

matplotlib.use("Agg")  # headless backend, must precede pyplot

import matplotlib.pyplot as plt

from .figures import plot_critic_bias, plot_learning_curves
from .runs import REQUIRED_COLUMNS, resolve_run_specs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plot", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    curves = sub.add_parser("curves", help="learning curves (IQM + bootstrap band)")
    curves.add_argument("--runs", action="append", required=True,
                        metavar="[LABEL=]GLOB", help="run set; repeatable")
    curves.add_argument("--metric", default="return_mean", choices=REQUIRED_COLUMNS)
    curves.add_argument("--out", required=True, help="output PNG path")

    bias = sub.add_parser("bias", help="critic bias over training")
    bias.add_argument("--runs", action="append", required=True,
                      metavar="[LABEL=]GLOB", help="run set; repeatable")
    bias.add_argument("--out", required=True, help="output PNG path")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run_sets = resolve_run_specs(args.runs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    fig, ax = plt.subplots(figsize=(7, 4.5), constrained_layout=True)
    if args.command == "curves":
        plot_learning_curves(ax, run_sets, args.metric)
    else:
        plot_critic_bias(ax, run_sets)
    fig.savefig(args.out, dpi=150)
    plt.close(fig)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
