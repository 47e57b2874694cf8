"""Command-line interface: solve single cases or benchmark suites.

Exit codes: 0 when the solve reached the optimality tolerance, 2 when it
terminated otherwise, 1 for usage or input errors.
"""
from __future__ import annotations

import argparse
import os
import sys

from .bench import BenchRecord, render_csv, render_text, run_suite, solve_case
from .ipm import OPTIMAL
from .matpower import ParseError


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gridnlp",
                     description="Condensed-space interior-point ACOPF solver")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve one MATPOWER case file")
    ps.add_argument("case", help="path to a MATPOWER .m case file")
    ps.add_argument("--tol", type=float, default=1e-4)
    ps.add_argument("--max-iter", type=int, default=3000)
    ps.add_argument("--format", choices=("text", "json", "csv"), default="text")
    ps.add_argument("--log-level", type=int, choices=range(4), default=1)
    ps.add_argument("--diagnose-conditioning", action="store_true",
                    help="estimate condensed/augmented condition numbers")
    ps.add_argument("--backend", choices=("condensed", "dense_aug"),
                    default="condensed")

    pu = sub.add_parser("suite", help="solve every case listed in a manifest")
    pu.add_argument("manifest", help="text file with one case path per line")
    pu.add_argument("--tol", type=float, default=1e-4)
    pu.add_argument("--max-iter", type=int, default=3000)
    pu.add_argument("--out", default=None, help="directory for csv/json output")
    pu.add_argument("--parallel", type=int, default=0,
                    help="number of worker processes (0 = sequential)")
    pu.add_argument("--log-level", type=int, choices=range(4), default=1)
    return parser


def _cmd_solve(args) -> int:
    if args.tol <= 0:
        raise _UsageError("tol must be > 0")
    if not os.path.exists(args.case):
        print(f"error: case file not found: {args.case}", file=sys.stderr)
        return 1
    try:
        record, report = solve_case(
            args.case, tol=args.tol, max_iter=args.max_iter,
            log_level=args.log_level, diagnose=args.diagnose_conditioning,
            backend=args.backend,
        )
    except ParseError as exc:
        print(f"error: {args.case}: {exc}", file=sys.stderr)
        return 1
    if args.format == "json":
        print(record.to_json())
    elif args.format == "csv":
        print(render_csv([record]), end="")
    else:
        print(render_text([record]), end="")
        if record.condensed_condition is not None:
            print(f"condensed condition estimate: {record.condensed_condition:.3e}")
        if record.augmented_condition is not None:
            print(f"augmented condition estimate: {record.augmented_condition:.3e}")
        if record.augmented_condition_dense is not None:
            print(f"augmented condition (dense oracle): "
                  f"{record.augmented_condition_dense}")
    return 0 if report.status == OPTIMAL else 2


def _cmd_suite(args) -> int:
    if args.tol <= 0:
        raise _UsageError("tol must be > 0")
    if not os.path.exists(args.manifest):
        print(f"error: manifest not found: {args.manifest}", file=sys.stderr)
        return 1
    with open(args.manifest) as fh:
        base = os.path.dirname(os.path.abspath(args.manifest))
        paths = []
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            paths.append(line if os.path.isabs(line) else os.path.join(base, line))
    records = run_suite(paths, tol=args.tol, max_iter=args.max_iter,
                        log_level=args.log_level, parallel=args.parallel)
    print(render_text(records), end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "records.csv"), "w") as fh:
            fh.write(render_csv(records))
        with open(os.path.join(args.out, "records.json"), "w") as fh:
            fh.write("[" + ",\n".join(r.to_json() for r in records) + "]\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "solve":
            return _cmd_solve(args)
        return _cmd_suite(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
