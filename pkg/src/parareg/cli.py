"""Command-line front end: ``parareg <command> [options]``.

Every command runs one or more verification suites, prints one line per
check, writes CSV and JSON reports when ``--out`` is given, and exits with
status 0 exactly when every counted check passes (1 otherwise, 2 on a
configuration error).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ._validation import ConfigurationError, DomainError
from .config import ExperimentConfig, _fraction, load_config
from .suites import run_suite

COMMANDS = {
    "verify-constants": ("constants",),
    "cover": ("geometry", "intersection"),
    "contact": ("contact",),
    "barrier": ("barrier",),
    "solve": ("solver",),
    "decay": ("decay", "measure"),
    "iqa": ("iqa",),
    "all": ("geometry", "intersection", "contact", "barrier", "solver", "decay", "measure", "iqa", "constants"),
}

log = logging.getLogger("parareg")


def build_parser():
    parser = argparse.ArgumentParser(prog="parareg", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS), help="suite group to run")
    parser.add_argument("--config", type=Path, help="INI or JSON experiment configuration")
    parser.add_argument("--out", type=Path, help="directory for CSV and JSON reports")
    parser.add_argument("--seed", type=int, help="base random seed")
    parser.add_argument("--resolution", type=_fraction, help="spatial step h, e.g. 1/64")
    parser.add_argument("--trials", type=int, help="override the per-suite trial count")
    parser.add_argument("--quick", action="store_true", default=None, help="coarse grids and fewer trials")
    parser.add_argument("--jobs", type=int, help="worker processes for independent trials")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, resolution=args.resolution, trials=args.trials, quick=args.quick,
                              jobs=args.jobs, out=None if args.out is None else str(args.out))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigurationError, DomainError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    summary = {"command": args.command, "config": cfg.to_dict(), "suites": {}}
    ok = True
    for name in COMMANDS[args.command]:
        log.info("running %s", name)
        try:
            rep = run_suite(name, cfg)
        except ConfigurationError as exc:
            print(f"configuration error in {name}: {exc}", file=sys.stderr)
            return 2
        print(f"== {name} ({rep.elapsed:.1f} s): {'PASS' if rep.passed else 'FAIL'}")
        for line in rep.lines():
            print(line)
        summary["suites"][name] = {"passed": rep.passed, "checks": {c.key: c.passed for c in rep.checks}}
        ok = ok and rep.passed
    summary["passed"] = ok
    if cfg.out:
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out) / "summary.json").write_text(json.dumps(summary, indent=2))
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
