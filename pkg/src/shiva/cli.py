"""Command-line entry point.

    shiva <command> [--config PATH] [--seed N] [--out DIR] [--set key=value ...]

Commands: budget-dynamics, grad-consistency, variance-demo, toy-train and
gradcheck.  Each writes ``report.json``, ``series.csv`` and any extra CSV or
SVG files into ``--out`` (default ``runs/<command>``) and prints a summary.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiments.budget_dynamics import run_budget_dynamics
from .experiments.config import CONFIGS, ConfigError, build_config
from .experiments.grad_consistency import run_grad_consistency
from .experiments.gradcheck import run_gradcheck
from .experiments.toy_train import run_toy_train
from .experiments.variance_demo import run_variance_demo

RUNNERS = {
    "budget_dynamics": run_budget_dynamics,
    "grad_consistency": run_grad_consistency,
    "variance_demo": run_variance_demo,
    "toy_train": run_toy_train,
    "gradcheck": run_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shiva", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in RUNNERS:
        dashed = name.replace("_", "-")
        p = sub.add_parser(dashed, aliases=[name], help=f"run {dashed}")
        p.set_defaults(key=name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory (default runs/<command>)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override one config field; repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(CONFIGS[args.key], args.config, args.overrides, args.seed)
        report = RUNNERS[args.key](cfg)
    except (ConfigError, ValueError) as exc:
        print(f"shiva {args.command}: error: {exc}", file=sys.stderr)
        return 1
    out = report.write(args.out or f"runs/{args.key}")
    print(json.dumps(report.summary, indent=2, sort_keys=True, default=str))
    print(f"wrote {out}  ({report.wall_clock_s:.1f} s)")
    if args.key == "gradcheck" and not report.summary["passed"]:
        print("failing checks: " + ", ".join(report.summary["failed"]), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
