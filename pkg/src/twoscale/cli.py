"""Command-line entry points.

Exit codes: 0 on success, 1 on invalid input (bad config, missing or
malformed files), 2 on solver failure or invariant violations.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from . import io as tio
from .config import parse_config
from .driver import TwoScaleSolver, check_bounds, stability_probe
from .errors import InvalidArgumentError, SolverError
from .mms import run_mms_study
from .studies import run_contraction_study

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2


def _report_violations(violations, stream):
    for v in violations:
        print(
            f"{v.field} macro={v.macro_index} micro={v.micro_index} value={v.value!r} "
            f"{v.kind} bound={v.bound!r} magnitude={v.magnitude:.3e}",
            file=stream,
        )


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    out = Path(args.out)
    solver = TwoScaleSolver(cfg)
    result = solver.run()
    out.mkdir(parents=True, exist_ok=True)
    paths = tio.write_trajectory(result.snapshots, out)
    tio.write_diagnostics(result.diagnostics, out / "diagnostics.jsonl")
    summary = {
        "envelope": result.envelope.as_dict(),
        "truncation_level": result.truncation_level,
        "snapshots": [p.name for p in paths],
        "violations": sum(len(r) for r in result.reports),
    }
    tio.atomic_write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    print(f"wrote {len(paths)} snapshots to {out}")
    bad = [v for r in result.reports for v in r]
    if bad:
        print(f"{len(bad)} invariant-region violations", file=sys.stderr)
        _report_violations(bad, sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_mms(args) -> int:
    cfg = parse_config(args.config)
    table = run_mms_study(args.case or cfg.mms_case, args.levels, cfg, mode=args.mode)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tio.write_table(table.rows, out)
    for name in ("w1", "w2", "w3", "w4"):
        print(f"{name}: fitted order {table.fitted_order(name):.3f}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_contraction(args) -> int:
    cfg = parse_config(args.config)
    rows = run_contraction_study(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slab_steps", "slab", "inner_ratio", "outer_ratio"])
    for r in rows:
        w.writerow([r.slab_steps, repr(r.slab), repr(r.inner_ratio), repr(r.outer_ratio)])
    if args.out:
        tio.atomic_write(args.out, buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_bounds(args) -> int:
    state = tio.read_snapshot(args.snapshot)
    cfg = parse_config(args.config)
    env = TwoScaleSolver(cfg).envelope
    violations = check_bounds(state, env, args.tol if args.tol is not None else cfg.tol_pos)
    if violations:
        print(f"{len(violations)} violations", file=sys.stderr)
        _report_violations(violations, sys.stderr)
        return EXIT_SOLVER
    print("no violations")
    return EXIT_OK


def cmd_stability(args) -> int:
    cfg = parse_config(args.config)
    rep = stability_probe(cfg, args.delta, richardson=args.richardson)
    for t, r in zip(rep.times, rep.ratios):
        print(f"t={t:.6g} ratio={r:.6e}")
    print(f"fitted rate C={rep.rate:.6e}")
    if rep.richardson:
        for d, dist in rep.richardson:
            print(f"delta={d:.3e} distance(T)={dist:.6e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twoscale", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate and write snapshots and diagnostics")
    r.add_argument("config")
    r.add_argument("--out", default="twoscale_out")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("mms", help="manufactured-solution convergence study")
    m.add_argument("config")
    m.add_argument("--mode", choices=("space", "time"), default="space")
    m.add_argument("--case", choices=("quadratic", "linear", "steady"))
    m.add_argument("--levels", type=int)
    m.add_argument("--out", default="convergence.csv")
    m.set_defaults(func=cmd_mms)

    c = sub.add_parser("contraction", help="observed Picard contraction ratios")
    c.add_argument("config")
    c.add_argument("--out")
    c.set_defaults(func=cmd_contraction)

    b = sub.add_parser("bounds", help="check a snapshot against the invariant region")
    b.add_argument("snapshot")
    b.add_argument("config")
    b.add_argument("--tol", type=float)
    b.set_defaults(func=cmd_bounds)

    s = sub.add_parser("stability", help="sensitivity to perturbed initial data")
    s.add_argument("config")
    s.add_argument("delta", type=float)
    s.add_argument("--richardson", action="store_true")
    s.set_defaults(func=cmd_stability)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
