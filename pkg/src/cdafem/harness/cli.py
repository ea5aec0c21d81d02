"""Command-line entry point.

Exit codes: 0 on success, 1 when a check fails, 2 on invalid input
(config, snapshot or argument errors), 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from ..linalg import SolverError
from .config import parse_config, resolve_config
from .experiments import read_manifest, run_experiment, run_tag
from .properties import run_all
from .series import ErrorSeries, convergence_rates

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def cmd_run(args) -> int:
    result = run_experiment(args.config, args.out, log=None if args.quiet else print)
    print(f"wrote {len(result.files)} files and manifest.json to {result.out_dir}")
    return EXIT_OK


def _final_errors(run_dir, by):
    manifest = read_manifest(run_dir)
    exp = parse_config(manifest["config"])
    keys = [k for k in ("n", "dt", "H", "mu") if len(exp.sweep[k]) > 1]
    by = by or next((k for k in ("n", "dt") if k in keys), "n")
    rows = []
    for cfg in exp.runs():
        path = os.path.join(run_dir, f"series_{run_tag(cfg, keys)}.csv")
        if not os.path.exists(path):
            raise ValueError(f"{run_dir}: missing series file {os.path.basename(path)}")
        res = 1.0 / cfg.n if by == "n" else cfg.dt
        rows.append((res, ErrorSeries.from_csv(path).final_l2))
    return rows


def cmd_table(args) -> int:
    rows = []
    for d in args.run_dirs:
        rows.extend(_final_errors(d, args.by))
    table = convergence_rates(sorted(rows, reverse=True))
    print(f"{'resolution':>14} {'l2_error':>12} {'rate':>7}")
    for r, e, q in zip(table.resolutions, table.errors, table.rates):
        print(f"{r:14.6g} {e:12.4e} {q:7.3f}")
    if args.out:
        table.to_csv(args.out)
    return EXIT_OK


def cmd_sweep_mu(args) -> int:
    exp = resolve_config(args.config)
    if args.mu:
        exp = dataclasses.replace(exp, sweep={**exp.sweep, "mu": tuple(args.mu)})
        list(exp.runs())
    result = run_experiment(exp, args.out, log=None if args.quiet else print)
    for row in result.summary.get("mu_report", []):
        print("mu_a={} mu_b={} final_rel_diff={:.3e} max_rel_diff={:.3e}".format(*row))
    if "mu_max_final_rel_diff" in result.summary:
        print(f"largest pairwise final relative difference: {result.summary['mu_max_final_rel_diff']:.3e}")
    return EXIT_OK


def check_projection_summary(summary, rate_tol=0.2, spread_max=2.0) -> list:
    """Pass/fail lines for L2 rate 3, H1 rate 2 and the spread over mu."""
    lines = []
    for mu, r in summary["rates"].items():
        ok = all(abs(q - 3.0) <= rate_tol for q in r["l2"]) and all(abs(q - 2.0) <= rate_tol for q in r["h1"])
        lines.append((ok, f"mu={mu}: L2 rates {', '.join(f'{q:.3f}' for q in r['l2'])}; "
                          f"H1 rates {', '.join(f'{q:.3f}' for q in r['h1'])}"))
    for n, ratio in summary["spread"].items():
        lines.append((ratio <= spread_max, f"n={n}: max/min L2 over mu = {ratio:.4f}"))
    return lines


def cmd_check_projections(args) -> int:
    failed = False
    for preset in ("poisson_projection", "stokes_projection"):
        out = os.path.join(args.out, preset) if args.out else None
        result = run_experiment(preset, out)
        for ok, text in check_projection_summary(result.summary):
            failed |= not ok
            print(f"{'PASS' if ok else 'FAIL'} {preset} {text}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_verify_properties(args) -> int:
    results = run_all(seed=args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdafem", description="Nudged finite element experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config or preset")
    r.add_argument("config", help="TOML path or preset name")
    r.add_argument("--out", help="output directory (default: <output.dir>/<name>)")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("table", help="rate table from completed run directories")
    t.add_argument("run_dirs", nargs="+")
    t.add_argument("--by", choices=("n", "dt"), help="resolution column (default: the swept one)")
    t.add_argument("--out", help="write the table as CSV")
    t.set_defaults(func=cmd_table)

    s = sub.add_parser("sweep-mu", help="run a config over several nudging parameters")
    s.add_argument("config", nargs="?", default="mu_sweep")
    s.add_argument("--mu", type=_float, nargs="+", help="override the mu list ('inf' for direct)")
    s.add_argument("--out")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_sweep_mu)

    c = sub.add_parser("check-projections", help="rate and mu-spread checks of the nudged projections")
    c.add_argument("--out")
    c.set_defaults(func=cmd_check_projections)

    v = sub.add_parser("verify-properties", help="exact identities and structural properties")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify_properties)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SolverError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
