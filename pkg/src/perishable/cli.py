"""Perishable inventory policies by marginal analysis with an externality term.

    perishable preprocess --config run.ini [--force]
    perishable solve      --config run.ini
    perishable compare    --config run.ini [--with-dp]
    perishable dp         --config run.ini
    perishable sweep      --config run.ini [--with-dp]

Failures exit nonzero and print one JSON line ``{"error": ..., "message": ...}``
to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ConfigError, load_config

EXIT_USAGE = 2
EXIT_FAILURE = 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, metavar="PATH", help="INI run configuration")
    common.add_argument("--seed", type=int, metavar="N", help="override [simulation] seed")
    common.add_argument("--out", metavar="DIR", help="override [output] dir")
    common.add_argument("--force", action="store_true", help="rebuild the preprocess cache")
    common.add_argument("-q", "--quiet", action="store_true", help="only print errors")

    p = argparse.ArgumentParser(prog="perishable", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("preprocess", parents=[common],
                   help="simulate cost-independent curves and cache them")
    sub.add_parser("solve", parents=[common], help="compute the policy table and report")
    for name, text in (("compare", "heuristic versus DP or best base-stock cost"),
                       ("sweep", "compare over the [sweep] cost rows")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--with-dp", action="store_true", help="benchmark against DP")
    sub.add_parser("dp", parents=[common], help="solve the DP benchmark")
    return p


def _emit_error(kind: str, message: str, command: str | None) -> None:
    line = {"error": kind, "message": message}
    if command:
        line["command"] = command
    print(json.dumps(line, sort_keys=True), file=sys.stderr)


def _run(args) -> None:
    cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
    if args.command == "preprocess":
        pre = pipeline.preprocess(cfg, force=args.force)
        print(f"cache={pre.path} hit={int(pre.hit)}")
    elif args.command == "solve":
        res = pipeline.solve(cfg, force=args.force)
        print(res.report.to_text(), end="")
        print(f"out={res.out}")
    elif args.command == "compare":
        rep = pipeline.compare(cfg, with_dp=args.with_dp, force=args.force)
        print(rep.to_text(), end="")
    elif args.command == "dp":
        summary = pipeline.run_dp(cfg)
        for k, v in summary.items():
            print(f"{k}={'' if v is None else (f'{v:.10g}' if isinstance(v, float) else v)}")
    elif args.command == "sweep":
        reps = pipeline.sweep(cfg, with_dp=args.with_dp, force=args.force)
        print(f"rows={len(reps)} out={cfg.output_dir}/sweep.csv")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            _emit_error("UsageError", "invalid command line (see usage above)", None)
        return exc.code or 0
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        _run(args)
    except ConfigError as exc:
        _emit_error("ConfigError", str(exc), args.command)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError, ArithmeticError) as exc:
        _emit_error(type(exc).__name__, str(exc), args.command)
        return EXIT_FAILURE
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
