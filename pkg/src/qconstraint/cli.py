"""Command-line front end: ``qconstraint <subcommand> --scenario FILE``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from .errors import ConstraintError

log = logging.getLogger("qconstraint")

STAGES = {"curve": "curve", "modes": "modes", "effective": "effective", "spectrum": "spectrum",
          "converge": "converge", "run": "converge"}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qconstraint", description="Constrained quantum Hamiltonians on curves and surfaces.")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "curve": "sample the curve and write curve.csv",
        "modes": "solve the cross-section and write modes.csv, lambda.csv",
        "effective": "assemble the effective field (effective_field.csv)",
        "spectrum": "diagonalize the constrained operator (spectrum.csv)",
        "converge": "epsilon study against the full-dimensional oracle (convergence.csv)",
        "run": "full pipeline, same as converge when eps_list is set",
    }
    for name, h in helps.items():
        s = sub.add_parser(name, help=h)
        s.add_argument("--scenario", required=True, type=Path)
        _common(s)
    c = sub.add_parser("check", help="run the identity suite")
    c.add_argument("--quick", action="store_true", help="coarser grids, same thresholds")
    _common(c)
    return p


def _common(s: argparse.ArgumentParser):
    s.add_argument("--out", type=Path, default=None, help="output directory")
    s.add_argument("--seed", type=int, default=None, help="overrides the scenario seed (u64)")
    s.add_argument("--threads", type=int, default=None, help="BLAS/LAPACK thread limit")


def _run_check(args) -> int:
    from .checks import run_identity_suite
    from .io import write_csv, write_json

    results = run_identity_suite(quick=args.quick)
    for r in results:
        print(r.line())
    if args.out is not None:
        rows = [[r.name, r.value, r.threshold, r.relation, r.passed] for r in results]
        write_csv(args.out / "checks.csv", ["name", "value", "threshold", "relation", "passed"], rows,
                  {"suite": "identity checks"}, 1.0)
        write_json(args.out / "checks.json", {"results": [r.as_dict() for r in results],
                                              "passed": all(r.passed for r in results)})
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _run_scenario(args) -> int:
    from .pipeline import run_scenario
    from .scenario import parse_scenario

    sc = parse_scenario(args.scenario)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConstraintError("--seed must be an unsigned 64-bit integer")
        sc = sc.model_copy(update={"seed": args.seed})
    out = args.out or (Path(sc.resolve(sc.output)) if sc.output else Path("out") / sc.name)
    res = run_scenario(sc, out, STAGES[args.command])
    for f in res.files:
        print(f)
    if res.spectrum is not None:
        print("lowest eigenvalues:", " ".join(f"{v:.10g}" for v in res.spectrum.values))
    if res.convergence is not None:
        c = res.convergence
        print(f"convergence order {c.order:.3f}, monotonic {c.monotonic}, relative error {c.relative_error_last:.3e}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=args.threads):
            if args.command == "check":
                return _run_check(args)
            return _run_scenario(args)
    except ConstraintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
