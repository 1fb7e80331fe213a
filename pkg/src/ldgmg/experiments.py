"""Experiment harness: configurations, reference tables, sweeps and
manufactured-solution convergence studies. Output is CSV."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .blocklinalg import random_vector
from .ldg import LdgConfig, assemble_level, assemble_rhs, l2_error
from .mesh import ADAPTIVE_PRESETS, DIRICHLET, NEUMANN, PERIODIC, MeshHierarchy, build_adaptive, build_uniform
from .multigrid import MG_KINDS, MODES, SOLVERS, SolveReport, build_hierarchy

log = logging.getLogger(__name__)

CSV_FIELDS = ["dim", "grid", "n", "p", "mode", "solver", "mgkind", "tau0", "tauD", "nu", "seed", "N", "rho", "converged"]
GRIDS = ("uniform", "adaptive")
BCS = (NEUMANN, DIRICHLET, PERIODIC)
DEFAULT_BUDGET_GB = 8.0


@dataclass(frozen=True)
class ExperimentConfig:
    """One solver configuration; ``n`` is the grid size for uniform grids
    and ``2**max_level`` (the effective 1/h_min) for adaptive grids."""

    dim: int = 2
    grid: str = "uniform"
    n: int = 16
    p: int = 1
    mode: str = "flux"
    solver: str = "vcycle"
    mgkind: str = "h"
    tau0: float = 0.01
    tauD: float = 100.0
    nu: int = 3
    seeds: tuple[int, ...] = (0, 1, 2)
    tol: float = 1e-10
    max_iter: int = 1000
    bc: str = NEUMANN
    preset: str = "corner"
    output: Optional[str] = None

    def validate(self) -> "ExperimentConfig":
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.grid not in GRIDS:
            raise ValueError(f"grid must be one of {GRIDS}, got {self.grid!r}")
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 2, got {self.n}")
        if not 1 <= self.p <= 8:
            raise ValueError(f"p must be in [1, 8], got {self.p}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {tuple(SOLVERS)}, got {self.solver!r}")
        if self.mgkind not in MG_KINDS:
            raise ValueError(f"mgkind must be one of {MG_KINDS}, got {self.mgkind!r}")
        if self.tau0 < 0 or self.tauD <= 0:
            raise ValueError("need tau0 >= 0 and tauD > 0")
        if self.nu < 1:
            raise ValueError("nu must be at least 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.bc not in BCS:
            raise ValueError(f"bc must be one of {BCS}, got {self.bc!r}")
        if self.grid == "adaptive" and self.preset not in ADAPTIVE_PRESETS:
            raise ValueError(f"unknown adaptive preset {self.preset!r}")
        if self.grid == "adaptive" and self.bc == PERIODIC:
            raise ValueError("periodic boundaries are only available on uniform grids")
        return self

    @property
    def max_level(self) -> int:
        return self.n.bit_length() - 1

    def ldg(self) -> LdgConfig:
        return LdgConfig(tau0=self.tau0, tauD=self.tauD)

    def echo(self, seed: int) -> dict:
        """The configuration part of a CSV row."""
        return {
            "dim": self.dim,
            "grid": self.grid if self.grid == "uniform" else f"adaptive:{self.preset}",
            "n": self.n,
            "p": self.p,
            "mode": self.mode,
            "solver": self.solver,
            "mgkind": self.mgkind,
            "tau0": f"{self.tau0:g}",
            "tauD": f"{self.tauD:g}",
            "nu": self.nu,
            "seed": seed,
        }


def build_mesh(cfg: ExperimentConfig) -> MeshHierarchy:
    if cfg.grid == "uniform":
        return build_uniform(cfg.dim, cfg.n, cfg.bc)
    return build_adaptive(cfg.dim, ADAPTIVE_PRESETS[cfg.preset](), cfg.max_level, cfg.bc)


def estimate_memory(cfg: ExperimentConfig, nelem: int | None = None) -> float:
    """Rough peak bytes of the lean hierarchy build: a small multiple of the
    finest Laplacian (2d+1 dense blocks per element row)."""
    if nelem is None:
        nelem = cfg.n**cfg.dim if cfg.grid == "uniform" else 4 * cfg.n ** (cfg.dim - 1)
    k = (cfg.p + 1) ** cfg.dim
    return 4.0 * nelem * (2 * cfg.dim + 1) * k * k * 8


@dataclass
class SolveResult:
    config: ExperimentConfig
    reports: list[SolveReport]
    rows: list[dict]

    @property
    def rho(self) -> float:
        return float(np.mean([r.rho for r in self.reports]))

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.reports)


def run_solve(cfg: ExperimentConfig, mesh: MeshHierarchy | None = None) -> SolveResult:
    """Measure rho for each seed: f = 0 and a random initial guess."""
    cfg.validate()
    mesh = mesh or build_mesh(cfg)
    hier = build_hierarchy(mesh, cfg.p, cfg.ldg(), cfg.mode, cfg.mgkind, cfg.nu, keep_level_operators=False)
    solve = SOLVERS[cfg.solver]
    reports, rows = [], []
    for seed in cfg.seeds:
        x0 = random_vector(hier.ndofs, seed)
        rep = solve(hier, np.zeros(hier.ndofs), x0, tol=cfg.tol, max_iter=cfg.max_iter)
        rep.x = None
        rep.config = cfg.echo(seed)
        reports.append(rep)
        rows.append(rep.csv_row())
        log.info("%s -> N=%d rho=%.4f", rep.config, rep.N, rep.rho)
    return SolveResult(cfg, reports, rows)


# ---------------------------------------------------------------------------
# reference tables


@dataclass(frozen=True)
class ReferenceTable:
    """Published convergence factors for one solver/geometry setting.

    ``values[mode][p]`` lists rho for the entries of ``ns`` (None = not
    reported). For p-multigrid tables the rows are indexed by n in the
    source but stored here by p like the others.
    """

    table_id: str
    dim: int
    solver: str
    grid: str
    mgkind: str
    ns: tuple[int, ...]
    values: dict

    def configs(self, n_max: int | None = None, p_max: int | None = None, modes=MODES, **overrides) -> list[ExperimentConfig]:
        out = []
        for mode in modes:
            for p, vals in self.values[mode].items():
                if p_max is not None and p > p_max:
                    continue
                for n, v in zip(self.ns, vals):
                    if v is None or (n_max is not None and n > n_max):
                        continue
                    out.append(
                        ExperimentConfig(dim=self.dim, grid=self.grid, n=n, p=p, mode=mode, solver=self.solver, mgkind=self.mgkind, **overrides)
                    )
        return out

    def reference(self, mode: str, p: int, n: int) -> Optional[float]:
        vals = self.values[mode].get(p)
        if vals is None or n not in self.ns:
            return None
        return vals[self.ns.index(n)]


_ = None
N2 = (4, 8, 16, 32, 64, 128, 256, 512)
N3 = (4, 8, 16, 32, 64)
TABLES: dict[str, ReferenceTable] = {
    "S1": ReferenceTable("S1", 2, "vcycle", "uniform", "h", N2, {
        "primal": {
            1: [0.17, 0.25, 0.35, 0.48, 0.65, 0.80, 0.88, 0.92],
            2: [0.15, 0.21, 0.26, 0.41, 0.58, 0.71, 0.82, 0.90],
            3: [0.23, 0.29, 0.40, 0.54, 0.66, 0.79, 0.85, 0.91],
            4: [0.19, 0.25, 0.34, 0.48, 0.62, 0.75, 0.85, 0.91],
            5: [0.26, 0.33, 0.40, 0.59, 0.71, 0.81, 0.88, 0.92],
        },
        "flux": {
            1: [0.14, 0.15, 0.15, 0.16, 0.15, 0.15, 0.15, 0.15],
            2: [0.10, 0.10, 0.09, 0.09, 0.09, 0.08, 0.08, 0.08],
            3: [0.18, 0.18, 0.17, 0.16, 0.16, 0.16, 0.16, 0.16],
            4: [0.16, 0.15, 0.15, 0.15, 0.15, 0.14, 0.14, 0.14],
            5: [0.23, 0.23, 0.23, 0.23, 0.23, 0.23, 0.23, 0.23],
        },
    }),
    "S2": ReferenceTable("S2", 2, "mgpcg", "uniform", "h", N2, {
        "primal": {
            1: [0.04, 0.09, 0.13, 0.20, 0.30, 0.40, 0.50, 0.60],
            2: [0.05, 0.08, 0.12, 0.18, 0.24, 0.34, 0.44, 0.54],
            3: [0.08, 0.11, 0.15, 0.21, 0.29, 0.38, 0.48, 0.57],
            4: [0.07, 0.09, 0.14, 0.20, 0.28, 0.37, 0.46, 0.56],
            5: [0.11, 0.13, 0.17, 0.23, 0.34, 0.43, 0.51, 0.58],
        },
        "flux": {
            1: [0.05, 0.06, 0.06, 0.07, 0.07, 0.07, 0.07, 0.08],
            2: [0.04, 0.04, 0.04, 0.04, 0.04, 0.04, 0.04, 0.04],
            3: [0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07, 0.07],
            4: [0.07, 0.07, 0.07, 0.07, 0.06, 0.07, 0.07, 0.07],
            5: [0.10, 0.10, 0.10, 0.10, 0.10, 0.09, 0.09, 0.09],
        },
    }),
    "S3": ReferenceTable("S3", 3, "vcycle", "uniform", "h", N3, {
        "primal": {
            1: [0.19, 0.27, 0.40, 0.56, 0.71],
            2: [0.17, 0.23, 0.34, 0.49, 0.62],
            3: [0.25, 0.32, 0.45, 0.57, _],
            4: [0.22, 0.27, 0.40, _, _],
            5: [0.31, 0.38, 0.47, _, _],
        },
        "flux": {
            1: [0.17, 0.19, 0.20, 0.20, 0.21],
            2: [0.14, 0.13, 0.13, 0.13, 0.12],
            3: [0.21, 0.22, 0.21, 0.21, _],
            4: [0.21, 0.20, 0.19, _, _],
            5: [0.29, 0.29, 0.29, _, _],
        },
    }),
    "S4": ReferenceTable("S4", 3, "mgpcg", "uniform", "h", N3, {
        "primal": {
            1: [0.06, 0.10, 0.16, 0.23, 0.33],
            2: [0.07, 0.10, 0.14, 0.20, 0.28],
            3: [0.10, 0.13, 0.18, 0.25, _],
            4: [0.09, 0.12, 0.17, _, _],
            5: [0.13, 0.16, 0.21, _, _],
        },
        "flux": {
            1: [0.06, 0.08, 0.09, 0.09, 0.10],
            2: [0.06, 0.06, 0.06, 0.06, 0.06],
            3: [0.09, 0.09, 0.09, 0.09, _],
            4: [0.09, 0.09, 0.09, _, _],
            5: [0.12, 0.12, 0.12, _, _],
        },
    }),
    "S5": ReferenceTable("S5", 2, "mgpcg", "uniform", "hp", N2, {
        "primal": {
            1: [0.04, 0.09, 0.13, 0.20, 0.30, 0.40, 0.50, 0.60],
            2: [0.06, 0.12, 0.19, 0.30, 0.43, 0.52, 0.63, 0.71],
            4: [0.10, 0.19, 0.32, 0.45, 0.57, 0.67, 0.75, 0.80],
            8: [0.20, 0.36, 0.51, 0.63, 0.71, 0.79, 0.84, _],
        },
        "flux": {
            1: [0.05, 0.06, 0.06, 0.07, 0.07, 0.07, 0.07, 0.08],
            2: [0.04, 0.05, 0.06, 0.06, 0.07, 0.08, 0.08, 0.08],
            4: [0.04, 0.05, 0.06, 0.07, 0.08, 0.08, 0.08, 0.08],
            8: [0.08, 0.08, 0.08, 0.08, 0.08, 0.08, 0.08, _],
        },
    }),
    "S6": ReferenceTable("S6", 3, "mgpcg", "uniform", "hp", N3, {
        "primal": {
            1: [0.06, 0.10, 0.16, 0.23, 0.33],
            2: [0.08, 0.15, 0.24, 0.35, 0.46],
            4: [0.13, 0.26, 0.38, 0.50, _],
            8: [0.25, 0.41, _, _, _],
        },
        "flux": {
            1: [0.06, 0.08, 0.09, 0.09, 0.10],
            2: [0.04, 0.07, 0.08, 0.08, 0.08],
            4: [0.06, 0.07, 0.08, 0.08, _],
            8: [0.12, 0.12, _, _, _],
        },
    }),
    "S7": ReferenceTable("S7", 2, "mgpcg", "adaptive", "h", (16, 32, 64, 128, 256, 512), {
        "primal": {
            1: [0.03, 0.09, 0.17, 0.25, 0.37, 0.47],
            2: [0.04, 0.08, 0.15, 0.21, 0.32, 0.42],
            3: [0.07, 0.11, 0.18, 0.25, 0.35, 0.44],
            4: [0.06, 0.10, 0.17, 0.26, 0.37, 0.45],
            5: [0.09, 0.13, 0.19, 0.29, 0.38, 0.47],
        },
        "flux": {
            1: [0.02, 0.06, 0.08, 0.09, 0.12, 0.14],
            2: [0.03, 0.05, 0.09, 0.11, 0.13, 0.14],
            3: [0.06, 0.08, 0.11, 0.15, 0.17, 0.18],
            4: [0.06, 0.08, 0.13, 0.18, 0.19, 0.21],
            5: [0.08, 0.12, 0.16, 0.21, 0.22, 0.25],
        },
    }),
    "S8": ReferenceTable("S8", 3, "mgpcg", "adaptive", "h", (16, 32, 64, 128, 256), {
        "primal": {
            1: [0.05, 0.11, 0.19, 0.28, 0.39],
            2: [0.05, 0.10, 0.18, 0.28, _],
            3: [0.08, 0.14, 0.21, 0.30, _],
            4: [0.08, 0.13, 0.21, _, _],
            5: [0.11, 0.16, _, _, _],
        },
        "flux": {
            1: [0.04, 0.08, 0.10, 0.14, 0.14],
            2: [0.04, 0.07, 0.14, 0.18, _],
            3: [0.08, 0.11, 0.17, 0.21, _],
            4: [0.08, 0.11, 0.21, _, _],
            5: [0.12, 0.15, _, _, _],
        },
    }),
}
del _


# ---------------------------------------------------------------------------
# sweeps


def _row_key(row: dict) -> tuple:
    return tuple(str(row[k]) for k in CSV_FIELDS[:11])


def read_rows(path: str) -> list[dict]:
    if not path or not os.path.exists(path):
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def append_rows(path: str, rows: Iterable[dict]) -> None:
    rows = list(rows)
    if not path or not rows:
        return
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in CSV_FIELDS})


def skipped_rows(cfg: ExperimentConfig, reason: str = "skipped") -> list[dict]:
    return [dict(cfg.echo(s), N="", rho="", converged=reason) for s in cfg.seeds]


def run_sweep(
    configs: Iterable[ExperimentConfig] | str,
    output: str | None = None,
    budget_gb: float = DEFAULT_BUDGET_GB,
    n_max: int | None = None,
    p_max: int | None = None,
    modes=MODES,
    progress: Callable[[ExperimentConfig, Optional[SolveResult]], None] | None = None,
    **overrides,
) -> list[dict]:
    """Run many configurations, appending one CSV row per seed.

    ``configs`` may be a reference-table id ("S1".."S8"). Rows already in
    ``output`` (same configuration echo) are not recomputed; entries whose
    estimated memory exceeds the budget are recorded as skipped.
    """
    if isinstance(configs, str):
        if configs not in TABLES:
            raise ValueError(f"unknown table {configs!r}; choose from {sorted(TABLES)}")
        configs = TABLES[configs].configs(n_max, p_max, modes, **overrides)
    done = {_row_key(r): r for r in read_rows(output)} if output else {}
    rows = []
    for cfg in configs:
        cfg.validate()
        keys = [_row_key(cfg.echo(s)) for s in cfg.seeds]
        if all(k in done for k in keys):
            rows.extend(done[k] for k in keys)
            continue
        if estimate_memory(cfg) > budget_gb * 2**30:
            new = skipped_rows(cfg)
            res = None
        else:
            res = run_solve(cfg)
            new = res.rows
        append_rows(output, new)
        rows.extend(new)
        if progress:
            progress(cfg, res)
    return rows


def tau_study(
    param: str,
    values: Iterable[float],
    ns: Iterable[int] = (4, 8, 16, 32, 64, 128),
    p: int = 2,
    solver: str = "mgpcg",
    seeds=(0, 1, 2),
    output: str | None = None,
    **kw,
) -> list[dict]:
    """rho versus n for a range of one penalty constant.

    ``param="tau0"`` uses periodic boundaries; ``param="tauD"`` homogeneous
    Dirichlet boundaries.
    """
    if param not in ("tau0", "tauD"):
        raise ValueError("param must be 'tau0' or 'tauD'")
    bc = PERIODIC if param == "tau0" else DIRICHLET
    configs = [
        ExperimentConfig(dim=2, n=n, p=p, mode="flux", solver=solver, bc=bc, seeds=tuple(seeds), **{param: float(v)})
        for v in values
        for n in ns
    ]
    return run_sweep(configs, output, **kw)


def rho_by(rows: list[dict], *keys: str) -> dict:
    """Seed-averaged rho grouped by the given CSV columns."""
    acc: dict = {}
    for r in rows:
        if r.get("rho") in ("", None):
            continue
        k = tuple(r[c] for c in keys)
        acc.setdefault(k, []).append(float(r["rho"]))
    return {k: float(np.mean(v)) for k, v in acc.items()}


# ---------------------------------------------------------------------------
# manufactured solutions


@dataclass(frozen=True)
class Manufactured:
    name: str
    u: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]


def _sin_product(dim: int, p: int) -> Manufactured:
    def u(x):
        return np.prod(np.sin(np.pi * x), axis=1)

    def f(x):
        return dim * np.pi**2 * u(x)

    return Manufactured("sin", u, f)


def _polynomial(dim: int, p: int) -> Manufactured:
    # (c + a . x)^p lies in Q_p
    a = np.array([1.0, 0.5, 0.25])[:dim]
    c = 0.3

    def u(x):
        return (c + x @ a) ** p

    def f(x):
        if p < 2:
            return np.zeros(len(x))
        return -p * (p - 1) * float(a @ a) * (c + x @ a) ** (p - 2)

    return Manufactured("poly", u, f)


MANUFACTURED = {"sin": _sin_product, "poly": _polynomial}


def solve_manufactured(dim: int, n: int, p: int, case: str = "sin", tauD: float = 100.0, tau0: float = 0.01) -> float:
    """L2 error of the Dirichlet problem with the catalog solution ``case``."""
    if case not in MANUFACTURED:
        raise ValueError(f"unknown manufactured case {case!r}; choose from {sorted(MANUFACTURED)}")
    ms = MANUFACTURED[case](dim, p)
    mesh = build_uniform(dim, n, DIRICHLET)
    cfg = LdgConfig(tau0=tau0, tauD=tauD)
    ops = assemble_level(mesh.finest, p, cfg)
    rhs = assemble_rhs(ops, f=ms.f, g=ms.u, cfg=cfg)
    u = spla.spsolve(ops.A.tocsc(), rhs.ell)
    return l2_error(ops.space, u, ms.u)


def run_manufactured(
    case: str = "sin",
    p: int = 1,
    ns: Iterable[int] = (8, 16, 32, 64),
    dim: int = 2,
    output: str | None = None,
) -> list[dict]:
    """L2 errors over a sequence of grids with observed orders log2(e_n / e_2n)."""
    ns = list(ns)
    errs = [solve_manufactured(dim, n, p, case) for n in ns]
    rows = []
    for i, (n, e) in enumerate(zip(ns, errs)):
        order = ""
        if i > 0 and ns[i] == 2 * ns[i - 1] and e > 0 and errs[i - 1] > 0:
            order = f"{math.log2(errs[i - 1] / e):.4f}"
        rows.append({"case": case, "dim": dim, "p": p, "n": n, "error": f"{e:.6e}", "order": order})
    if output:
        new = not os.path.exists(output) or os.path.getsize(output) == 0
        with open(output, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["case", "dim", "p", "n", "error", "order"], lineterminator="\n")
            if new:
                w.writeheader()
            w.writerows(rows)
    return rows
