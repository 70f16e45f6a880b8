"""Command line driver.

Parses an IR file, runs the summary analysis and the classical client,
prints per-point facts, and optionally emits DOT summaries, a JSON dump,
and a soundness report from the path-enumerating checker.

Exit codes: 0 success, 1 analysis or input errors, 2 soundness check
failed, 64 bad usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from typing import Optional

from . import ir
from .build import AnalysisError, BuildOpts
from .calls import analyze
from .client import classical
from .compose import FuelExhausted
from .oracle import check_soundness


class _UsageError(Exception):
    pass


class _ArgParser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: A003 - argparse API
        raise _UsageError(message)


def _build_parser() -> _ArgParser:
    top = _ArgParser(
        prog="ptsum",
        description="Pointer analysis over bounded procedure summaries.",
    )
    sub = top.add_subparsers(dest="command", metavar="command")
    sub.required = True
    p = sub.add_parser(
        "analyze",
        help="analyze one IR file and print per-point facts",
        description="Analyze one IR file and print per-point facts.",
    )
    p.add_argument("input", help="program in the small pointer IR")
    p.add_argument(
        "--mode",
        choices=("gpg", "stmt-ff"),
        default="gpg",
        help="client route: apply whole summaries, or per-statement flow",
    )
    p.add_argument(
        "--bypass",
        action="store_true",
        help="route caller facts a callee cannot observe around the call",
    )
    p.add_argument(
        "--k-limit",
        type=int,
        default=2,
        metavar="K",
        help="access path length bound (default 2)",
    )
    p.add_argument(
        "--max-unroll",
        type=int,
        default=3,
        metavar="N",
        help="loop/recursion bound for the soundness checker (default 3)",
    )
    p.add_argument(
        "--path-budget",
        type=int,
        default=100_000,
        metavar="N",
        help="state budget for the soundness checker (default 100000)",
    )
    p.add_argument(
        "--emit-dot",
        metavar="DIR",
        help="write one <proc>.dot per procedure's final summary",
    )
    p.add_argument("--emit-json", metavar="PATH", help="write facts as JSON")
    p.add_argument(
        "--check-soundness",
        action="store_true",
        help="enumerate concrete paths and verify the facts admit them",
    )
    p.add_argument(
        "--no-boundary",
        action="store_true",
        help="build summaries without entry bookkeeping (coarser, still sound)",
    )
    return top


def _atomic_write(path: str, data: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".ptsum-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def run(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.k_limit < 1:
            parser.error("--k-limit must be at least 1")
        if ns.max_unroll < 1:
            parser.error("--max-unroll must be at least 1")
        if ns.path_budget < 1:
            parser.error("--path-budget must be at least 1")
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 64

    try:
        prog = ir.parse_file(ns.input)
        opts = BuildOpts(k_limit=ns.k_limit, no_boundary=ns.no_boundary)
        result = analyze(prog, opts)
        mode = "stmtff" if ns.mode == "stmt-ff" else ns.mode
        facts = classical(result, mode=mode, bypass=ns.bypass)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ir.IrError, AnalysisError, FuelExhausted) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    for pname in sorted(prog.funcs):
        print(f"== {pname} ==")
        for pt in sorted(facts.facts[pname]):
            pairs = " ".join(
                f"{c}->{v}" for c, v in sorted(facts.facts[pname][pt])
            )
            print(f"  @{pt}: {pairs}")

    if ns.emit_dot:
        os.makedirs(ns.emit_dot, exist_ok=True)
        for pname in sorted(prog.funcs):
            dot = result.final(pname).to_dot(pname)
            _atomic_write(os.path.join(ns.emit_dot, f"{pname}.dot"), dot)
    if ns.emit_json:
        _atomic_write(
            ns.emit_json,
            json.dumps(facts.to_json(), indent=2, sort_keys=True) + "\n",
        )

    if ns.check_soundness:
        report = check_soundness(
            prog,
            facts,
            max_unroll=ns.max_unroll,
            path_budget=ns.path_budget,
        )
        failing = {(p, pt) for p, pt, _ in report.witnesses}
        for p, pt in report.covered:
            status = "FAIL" if (p, pt) in failing else "PASS"
            print(f"{p}@{pt}: {status}")
        print(report.render())
        if not report.ok:
            return 2

    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
