"""Command-line interface: ``ldgmg {solve,sweep,tau-study,manufactured}``.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines; flags
given on the command line override the file. Results go to CSV (stdout
when no ``--out`` is given). The exit code is 0 iff every run converged.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from dataclasses import fields

from .experiments import (
    CSV_FIELDS,
    DEFAULT_BUDGET_GB,
    TABLES,
    ExperimentConfig,
    append_rows,
    run_manufactured,
    run_solve,
    run_sweep,
    tau_study,
)
from .multigrid import MG_KINDS, MODES, SOLVERS

_CONFIG_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def load_config_file(path: str) -> dict:
    """Parse a plain ``key = value`` file (``#`` comments allowed)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    with open(path) as fh:
        parser.read_string("[config]\n" + fh.read())
    return dict(parser["config"])


def _coerce(key: str, value):
    if value is None:
        return None
    if key == "seeds":
        if isinstance(value, str):
            return tuple(int(s) for s in value.replace(",", " ").split())
        return tuple(int(s) for s in value)
    kind = _CONFIG_TYPES.get(key)
    if kind in ("int", int):
        return int(value)
    if kind in ("float", float):
        return float(value)
    return value


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        for k, v in load_config_file(args.config).items():
            if k not in _CONFIG_TYPES:
                raise ValueError(f"unknown configuration key {k!r} in {args.config}")
            values[k] = _coerce(k, v)
    for k in _CONFIG_TYPES:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = _coerce(k, v)
    return ExperimentConfig(**values).validate()


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file with configuration fields")
    p.add_argument("--dim", type=int, choices=(2, 3))
    p.add_argument("--grid", choices=("uniform", "adaptive"))
    p.add_argument("--preset", help="adaptive preset (corner, annulus)")
    p.add_argument("--n", type=int, help="grid size (adaptive: 1/h_min)")
    p.add_argument("--p", type=int, help="polynomial degree")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--solver", choices=tuple(SOLVERS))
    p.add_argument("--mgkind", choices=MG_KINDS)
    p.add_argument("--tau0", type=float)
    p.add_argument("--tauD", type=float)
    p.add_argument("--nu", type=int)
    p.add_argument("--seeds", help="comma separated seeds, default 0,1,2")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--bc", choices=("neumann", "dirichlet", "periodic"))


def _write(rows: list[dict], out: str | None, fieldnames=CSV_FIELDS) -> None:
    """Append rows to ``out`` or print them (with header) to stdout."""
    if out:
        append_rows(out, rows)
        return
    w = csv.DictWriter(sys.stdout, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k, "") for k in fieldnames})


def _all_converged(rows: list[dict]) -> bool:
    return all(str(r.get("converged")) in ("1", "skipped") for r in rows)


def cmd_solve(args) -> int:
    cfg = config_from_args(args)
    res = run_solve(cfg)
    _write(res.rows, args.out)
    print(f"# mean rho = {res.rho:.4f}", file=sys.stderr)
    return 0 if res.converged else 1


def cmd_sweep(args) -> int:
    overrides = {}
    if args.nu is not None:
        overrides["nu"] = args.nu
    if args.seeds is not None:
        overrides["seeds"] = _coerce("seeds", args.seeds)
    if args.max_iter is not None:
        overrides["max_iter"] = args.max_iter
    modes = tuple(args.modes.split(",")) if args.modes else MODES
    rows = run_sweep(args.table, None if args.out is None else args.out, args.budget_gb, args.n_max, args.p_max, modes, **overrides)
    if args.out is None:
        _write(rows, None)
    return 0 if _all_converged(rows) else 1


def cmd_tau(args) -> int:
    values = [float(v) for v in args.values.split(",")]
    ns = [int(v) for v in args.ns.split(",")]
    seeds = _coerce("seeds", args.seeds) if args.seeds else (0, 1, 2)
    rows = tau_study(args.param, values, ns, p=args.p, solver=args.solver, seeds=seeds, output=args.out, budget_gb=args.budget_gb)
    if args.out is None:
        _write(rows, None)
    return 0 if _all_converged(rows) else 1


def cmd_manufactured(args) -> int:
    ns = [int(v) for v in args.ns.split(",")]
    rows = run_manufactured(args.case, args.p, ns, args.dim, args.out)
    if args.out is None:
        _write(rows, None, ["case", "dim", "p", "n", "error", "order"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ldgmg", description="LDG Poisson multigrid experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="measure rho for one configuration")
    _add_config_flags(s)
    s.add_argument("--out", help="append CSV rows to this file")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="run the grid of a reference table")
    w.add_argument("--table", required=True, choices=sorted(TABLES))
    w.add_argument("--n-max", dest="n_max", type=int)
    w.add_argument("--p-max", dest="p_max", type=int)
    w.add_argument("--modes", help="comma separated subset of primal,flux")
    w.add_argument("--nu", type=int)
    w.add_argument("--seeds")
    w.add_argument("--max-iter", dest="max_iter", type=int)
    w.add_argument("--budget-gb", dest="budget_gb", type=float, default=DEFAULT_BUDGET_GB)
    w.add_argument("--out", help="CSV file; existing rows are reused")
    w.set_defaults(func=cmd_sweep)

    t = sub.add_parser("tau-study", help="rho versus n for several penalty constants")
    t.add_argument("--param", choices=("tau0", "tauD"), required=True)
    t.add_argument("--values", default="0.01,0.1,1,10,100,1000")
    t.add_argument("--ns", default="4,8,16,32,64,128")
    t.add_argument("--p", type=int, default=2)
    t.add_argument("--solver", choices=tuple(SOLVERS), default="mgpcg")
    t.add_argument("--seeds")
    t.add_argument("--budget-gb", dest="budget_gb", type=float, default=DEFAULT_BUDGET_GB)
    t.add_argument("--out")
    t.set_defaults(func=cmd_tau)

    m = sub.add_parser("manufactured", help="L2 convergence on a manufactured Dirichlet problem")
    m.add_argument("--case", choices=("sin", "poly"), default="sin")
    m.add_argument("--p", type=int, default=1)
    m.add_argument("--dim", type=int, choices=(2, 3), default=2)
    m.add_argument("--ns", default="8,16,32,64")
    m.add_argument("--out")
    m.set_defaults(func=cmd_manufactured)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
