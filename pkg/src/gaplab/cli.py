"""Command-line entry point.

Exit codes: 0 success, 1 contract violation, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .runner import RUNNERS, run_experiment

log = logging.getLogger("gaplab")

VERBS = ("butterfly", "streda", "normgap", "adiabatic", "wannier", "purify")


def _globals(p, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", metavar="PATH", default=d(None), help="INI configuration file")
    p.add_argument("--out", metavar="DIR", default=d("gaplab_out"), help="output directory")
    p.add_argument("--threads", type=int, metavar="N", default=d(1), help="worker threads")
    p.add_argument("--backend", choices=("lattice", "continuum"), default=d(None),
                   help="override [run] backend")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaplab", description="Gap labels, Chern numbers and magnetic perturbations.")
    _globals(p, suppress=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", metavar="VERB", required=True)
    helps = {"butterfly": "colored butterfly sweep over Farey fluxes",
             "streda": "IDS track, exact gap label and slope check",
             "normgap": "norm versus strong-topology contrast under a flux change",
             "adiabatic": "window densities under a slowly varying field",
             "wannier": "periodic frame, Wannier functions and decay",
             "purify": "dressed kernel, purification and Kato-Nagy unitary"}
    for v in VERBS:
        sp = sub.add_parser(v, help=helps[v])
        _globals(sp, suppress=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("gaplab: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, {"run": {"backend": args.backend}})
    except ConfigError as exc:
        print(f"gaplab: config error: {exc}", file=sys.stderr)
        return 2
    if args.verb not in RUNNERS:
        print(f"gaplab: unknown command {args.verb!r}", file=sys.stderr)
        return 2
    out = Path(args.out)
    try:
        oc = run_experiment(args.verb, cfg, out, args.threads)
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"gaplab {args.verb}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for line in oc.summary:
        print(line)
    for f in oc.failures:
        print(f"failed: {f}", file=sys.stderr)
    return 0 if oc.ok else 1


if __name__ == "__main__":
    sys.exit(main())
