"""Command line entry point ``pathfbsde``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

from .bench import RateFitError, SweepSpec, fit_rate, read_records, sweep_to_dir
from .coefficients import problem_zoo, registered_problems
from .condexp import FeatureMap
from .euler import simulate_batch
from .pathcore import DiscretePath, TimeGrid
from .picard import SchemeConfig, solve_implicit, solve_picard
from .sampling import SampleKey


def _params(items):
    out = {}
    for item in items or []:
        key, _, value = item.partition("=")
        if not _:
            raise SystemExit(f"--param expects key=value, got {item!r}")
        out[key] = float(value)
    return out


def _history(path, d):
    if path is None:
        return DiscretePath.constant(0.0, 0.0, d)
    with open(path) as fh:
        return DiscretePath.from_json(json.load(fh))


def _setup(args):
    cs, ref = problem_zoo(args.problem, **_params(args.param))
    history = _history(args.history, cs.d)
    grid = TimeGrid.uniform(history.T, cs.T, args.n)
    return cs, ref, history, grid


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def cmd_simulate(args):
    cs, _, history, grid = _setup(args)
    batch = simulate_batch(cs, history, grid, SampleKey(args.seed), args.samples)
    out = sys.stdout
    if args.summary:
        X = batch.X
        summary = {"problem": args.problem, "n": args.n, "samples": args.samples,
                   "seed": args.seed, "t": grid.nodes.tolist(),
                   "mean": X.mean(axis=1).tolist(), "std": X.std(axis=1, ddof=1).tolist()
                   if args.samples > 1 else None,
                   "terminal_mean": X[-1].mean(axis=0).tolist()}
        json.dump(summary, out, indent=2)
        out.write("\n")
        return 0
    w = csv.writer(out)
    w.writerow(["sample", "t_i"] + [f"x{k}" for k in range(cs.d)] + ["seed"])
    for j in range(args.samples):
        for i, t in enumerate(grid.nodes):
            w.writerow([j, repr(float(t))] + [repr(float(v)) for v in batch.X[i, j]]
                       + [args.seed])
    return 0


def cmd_solve(args):
    cs, _, history, grid = _setup(args)
    config = SchemeConfig(grid, m=args.m, N=args.samples, estimator=args.estimator,
                          features=FeatureMap(tuple(args.features.split(",")), args.lags),
                          n_inner=args.ninner, seed=args.seed, problem=args.problem,
                          params=_params(args.param))
    if args.estimator == "nested":
        try:
            config.check_nested_limits()
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    solver = solve_implicit if args.implicit else solve_picard
    res = solver(cs, history, grid, config)
    json.dump(res.to_json(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_sweep(args):
    spec = SweepSpec.from_json(args.spec)
    records, manifest = sweep_to_dir(spec, args.out)
    for f in manifest["failures"]:
        print(f"cell n={f['n']} m={f['m']} failed: {f['error']}", file=sys.stderr)
    return 2 if manifest["failures"] else 0


def cmd_fit(args):
    try:
        fit = fit_rate(read_records(args.records), args.axis)
    except RateFitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    json.dump(fit.to_json(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathfbsde",
                                description="Path-dependent FBSDE solver and experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def problem_args(sp):
        sp.add_argument("--problem", required=True, choices=registered_problems())
        sp.add_argument("--param", action="append", metavar="KEY=VALUE",
                        help="problem parameter override (repeatable)")
        sp.add_argument("--n", type=int, required=True, help="number of grid steps")
        sp.add_argument("--samples", type=int, required=True)
        sp.add_argument("--seed", type=_u64, default=0)
        sp.add_argument("--history", help="JSON path file with the history on [0, t]")

    sp = sub.add_parser("simulate", help="Euler paths as CSV")
    problem_args(sp)
    sp.add_argument("--summary", action="store_true", help="print summary statistics")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("solve", help="Picard or implicit scheme value at t0")
    problem_args(sp)
    sp.add_argument("--m", type=int, default=4)
    sp.add_argument("--estimator", choices=("regression", "nested"), default="regression")
    sp.add_argument("--ninner", type=int, default=64)
    sp.add_argument("--features", default="const,value,max,min,mean")
    sp.add_argument("--lags", type=int, default=0)
    sp.add_argument("--implicit", action="store_true")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sweep", help="convergence sweep to records.csv + manifest.json")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("fit", help="rate fit of a records.csv")
    sp.add_argument("--records", required=True)
    sp.add_argument("--axis", choices=("mesh", "picard"), required=True)
    sp.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
