"""Command line: ``roughchaos <experiment> --config <file> [--out DIR] [--seed S] [--threads K]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import run_experiment

log = logging.getLogger("roughchaos")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughchaos", description=__doc__)
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="flat key = value file with schema = 1")
    p.add_argument("--out", default=None, help="output directory (default: out/<experiment>)")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads for replicas")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.experiment,
                          {"seed": args.seed, "threads": args.threads})
    except (ConfigError, OSError) as exc:
        print(f"roughchaos: config error: {exc}", file=sys.stderr)
        return 2
    report = run_experiment(cfg)
    path = report.write(args.out or f"out/{args.experiment}")
    for c in report.criteria:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}")
    print(f"report: {path}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
