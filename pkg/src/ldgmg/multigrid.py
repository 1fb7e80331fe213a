"""Operator-coarsening multigrid: hierarchy build, smoother, V-cycle, MGPCG.

Two coarsening modes share the same transfer operators:

* ``primal``: Galerkin coarsening of the assembled Laplacian,
  ``A_c = I^T A_f I``.
* ``flux``: Galerkin coarsening of mass, gradient and penalty separately,
  then reassembly ``A_c = sum_k G_c,k^T M_c G_c,k + M_c T_c``.

All Laplacians are mass-weighted (``A = M (-D G + T)``), so the coarse
residual is simply ``I^T r``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np
import scipy.sparse as sp

from .blocklinalg import AssemblyError, BlockDiagonal, BottomSolver, diagonal_blocks, matmul, random_vector, transpose
from .ldg import (
    LdgConfig,
    LevelOperators,
    add_gradient_term,
    assemble_level,
    assemble_mass,
    assemble_weighted_penalty,
    check_symmetric,
    iter_gradient,
    laplacian,
)
from .mesh import DIRICHLET, MeshHierarchy, faces_of
from .transfer import TransferPair, build_h_interpolation, build_p_interpolation, coarse_mass, galerkin_weighted

log = logging.getLogger(__name__)

MODES = ("primal", "flux")
MG_KINDS = ("h", "p", "hp")
# p-coarsening stops at a direct solve if the p=1 problem is at most this size
P_BOTTOM_DIRECT_MAX = 2048
# stationary iterations stop once the error grows by this factor
DIVERGENCE_FACTOR = 1e12


# ---------------------------------------------------------------------------
# smoother


@numba.njit(cache=True)
def _gs_sweeps(indptr, indices, data, dinv, b, x, order, forward, sweeps):
    n = indptr.shape[0] - 1
    k = dinv.shape[1]
    r = np.empty(k)
    for _ in range(sweeps):
        for ii in range(n):
            i = order[ii] if forward else order[n - 1 - ii]
            for a in range(k):
                r[a] = b[i * k + a]
            for jj in range(indptr[i], indptr[i + 1]):
                j = indices[jj]
                if j == i:
                    continue
                for a in range(k):
                    s = 0.0
                    for c in range(k):
                        s += data[jj, a, c] * x[j * k + c]
                    r[a] -= s
            for a in range(k):
                s = 0.0
                for c in range(k):
                    s += dinv[i, a, c] * r[c]
                x[i * k + a] = s


class BlockGaussSeidel:
    """Element-block Gauss-Seidel in mesh order (forward) or reversed."""

    def __init__(self, A: sp.bsr_matrix, order: np.ndarray | None = None):
        R, C = A.blocksize
        if R != C:
            raise ValueError("Gauss-Seidel needs square blocks")
        A.sort_indices()
        self.A = A
        D = diagonal_blocks(A)
        try:
            np.linalg.cholesky(D)
        except np.linalg.LinAlgError as exc:
            raise AssemblyError("a diagonal block of A is singular or not positive definite") from exc
        self.dinv = np.linalg.inv(D)
        self.indptr = A.indptr.astype(np.int64)
        self.indices = A.indices.astype(np.int64)
        n = len(A.indptr) - 1
        self.order = np.arange(n, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
        if sorted(self.order.tolist()) != list(range(n)):
            raise ValueError("smoother order must be a permutation of the block rows")

    def __call__(self, b: np.ndarray, x: np.ndarray, direction: str = "forward", sweeps: int = 1) -> np.ndarray:
        if direction not in ("forward", "backward"):
            raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
        x = np.array(x, dtype=float, copy=True)
        _gs_sweeps(self.indptr, self.indices, self.A.data, self.dinv, np.asarray(b, dtype=float), x, self.order, direction == "forward", sweeps)
        return x


def block_gauss_seidel(A: sp.bsr_matrix, b: np.ndarray, x: np.ndarray, direction: str = "forward", sweeps: int = 1) -> np.ndarray:
    return BlockGaussSeidel(A)(b, x, direction, sweeps)


# ---------------------------------------------------------------------------
# hierarchy


@dataclass
class Level:
    A: sp.bsr_matrix
    mesh_index: int
    p: int
    ops: Optional[LevelOperators] = None
    smoother: Optional[BlockGaussSeidel] = None
    bottom: Optional[BottomSolver] = None


@dataclass
class Hierarchy:
    """Levels finest first; ``transfers[l]`` maps level l+1 into level l."""

    levels: list[Level]
    transfers: list[TransferPair]
    mode: str
    nu: int = 3
    singular: bool = False
    M_fine: Optional[BlockDiagonal] = None

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def A(self) -> sp.bsr_matrix:
        return self.levels[0].A

    @property
    def ndofs(self) -> int:
        return self.A.shape[0]


def level_chain(mesh: MeshHierarchy, p: int, mgkind: str = "h") -> list[tuple[int, int]]:
    """(mesh level index, degree) pairs from finest to coarsest."""
    if mgkind not in MG_KINDS:
        raise ValueError(f"mg kind must be one of {MG_KINDS}, got {mgkind!r}")
    if mgkind == "h":
        return [(i, p) for i in range(len(mesh))]
    chain = [(0, p)]
    q = p
    while q > 1:
        q = (q + 1) // 2
        chain.append((0, q))
    n1 = len(mesh.finest) * 2 ** mesh.dim
    if mgkind == "p" and n1 <= P_BOTTOM_DIRECT_MAX:
        return chain
    return chain + [(i, 1) for i in range(1, len(mesh))]


def _make_transfer(mesh: MeshHierarchy, fine: tuple[int, int], coarse: tuple[int, int]) -> TransferPair:
    if fine[0] == coarse[0]:
        I = build_p_interpolation(mesh.levels[fine[0]], fine[1], coarse[1])
        return TransferPair(I, "p", fine, coarse)
    if fine[1] != coarse[1] or coarse[0] != fine[0] + 1:
        raise ValueError("h-transfer needs consecutive mesh levels with equal degree")
    I = build_h_interpolation(mesh.levels[fine[0]], mesh.levels[coarse[0]], mesh.parents[fine[0]], fine[1])
    return TransferPair(I, "h", fine, coarse)


def coarsen_gradient(Gk: sp.bsr_matrix, M_f: BlockDiagonal, M_c: BlockDiagonal, tp: TransferPair) -> sp.bsr_matrix:
    """C(G_k) = M_c^-1 I^T M_f G_k I."""
    MGI = matmul(M_f.left_multiply(Gk), tp.I)
    return M_c.left_multiply(matmul(tp.IT, MGI), inverse=True, inplace=True)


def _stream_finest(mesh: MeshHierarchy, p: int, cfg: LdgConfig, tp: TransferPair | None, mode: str):
    """Finest-level A (and the flux-coarsened next level) without ever
    holding all gradient components and A at once."""
    level = mesh.finest
    M = assemble_mass(level, p)
    MT = assemble_weighted_penalty(level, p, cfg)
    flux = mode == "flux" and tp is not None
    if flux:
        M_c = coarse_mass(tp.I, M)
        MT_c = galerkin_weighted(MT, tp.I, tp.IT)
        G_c = []
    A = MT
    for Gk in iter_gradient(level, p, cfg, M):
        if flux:
            G_c.append(coarsen_gradient(Gk, M, M_c, tp))
        A = add_gradient_term(A, M, Gk)
        del Gk
    A.sort_indices()
    check_symmetric(A)
    fine = LevelOperators(M, [], None, A, level.h_min, p)
    coarse = LevelOperators(M_c, G_c, MT_c, None, level.h_min, tp.coarse[1]) if flux else None
    return fine, coarse


def coarsen_flux(ops: LevelOperators, tp: TransferPair, check: bool = True, laplace: bool = True) -> LevelOperators:
    """One step of the flux coarsening: M_c, G_c, (M T)_c, then A_c."""
    IT = tp.IT
    M_c = coarse_mass(tp.I, ops.M)
    G_c = [coarsen_gradient(Gk, ops.M, M_c, tp) for Gk in ops.G]
    MT_c = galerkin_weighted(ops.MT, tp.I, IT)
    A_c = laplacian(M_c, G_c, MT_c, check=check) if laplace else None
    return LevelOperators(M_c, G_c, MT_c, A_c, ops.h_level, tp.coarse[1])


def build_hierarchy(
    mesh: MeshHierarchy,
    p: int,
    cfg: LdgConfig | None = None,
    mode: str = "flux",
    mgkind: str = "h",
    nu: int = 3,
    keep_level_operators: bool = True,
    fine_ops: LevelOperators | None = None,
    max_levels: int | None = None,
) -> Hierarchy:
    """Assemble the finest operators and coarsen them down the level chain.

    With ``keep_level_operators=False`` only A, the smoother data and the
    transfers are retained on each level, which bounds memory for large runs.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if nu < 1:
        raise ValueError("nu must be at least 1")
    cfg = cfg or LdgConfig()
    chain = level_chain(mesh, p, mgkind)
    if max_levels is not None:
        chain = chain[:max_levels]
    keep = keep_level_operators
    streaming = fine_ops is None and not keep
    if streaming:
        tp0 = _make_transfer(mesh, chain[0], chain[1]) if len(chain) > 1 else None
        ops, streamed = _stream_finest(mesh, p, cfg, tp0, mode)
    else:
        ops = fine_ops or assemble_level(mesh.finest, p, cfg, laplace=keep)
    faces = faces_of(mesh.finest, cfg.resolve_bc(mesh.finest))
    singular = not any(f.kind == DIRICHLET for f in faces)
    M_fine = ops.M
    levels: list[Level] = []
    transfers = []
    A = None
    for step, cur in enumerate(chain):
        coarse_ops = None
        if step + 1 < len(chain):
            tp = tp0 if (step == 0 and streaming) else _make_transfer(mesh, cur, chain[step + 1])
            transfers.append(tp)
        if mode == "flux":
            if step == 0 and streaming:
                coarse_ops = streamed
            elif step + 1 < len(chain):
                coarse_ops = coarsen_flux(ops, tp, laplace=False)
            A = ops.build_laplacian(release=not keep)
        elif step == 0:
            A = ops.build_laplacian(release=not keep)
        levels.append(Level(A, cur[0], cur[1], ops if keep and (mode == "flux" or step == 0) else None))
        if step + 1 < len(chain):
            if mode == "primal":
                A = galerkin_weighted(A, tp.I, tp.IT)
                check_symmetric(A)
            if not keep:
                tp.__dict__.pop("IT", None)
        ops = coarse_ops
    hier = Hierarchy(levels, transfers, mode, nu, singular, M_fine)
    for lev in levels[:-1]:
        lev.smoother = BlockGaussSeidel(lev.A)
    levels[-1].bottom = BottomSolver(levels[-1].A)
    return hier


# ---------------------------------------------------------------------------
# cycles


def vcycle(h: Hierarchy, level: int, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """One V(nu, nu) cycle: forward pre-smoothing, backward post-smoothing."""
    lev = h.levels[level]
    if level == len(h.levels) - 1:
        return lev.bottom.solve(lev.bottom.project(b))
    x = lev.smoother(b, x, "forward", h.nu)
    r = b - lev.A @ x
    tp = h.transfers[level]
    b_c = tp.I.T @ r
    x_c = vcycle(h, level + 1, np.zeros_like(b_c), b_c)
    x = x + tp.I @ x_c
    return lev.smoother(b, x, "backward", h.nu)


@dataclass
class SolveReport:
    """Iterate error norms and the derived convergence factor."""

    errors: list[float]
    N: int
    converged: bool
    solver: str
    wall: float = 0.0
    config: dict = field(default_factory=dict)
    x: Optional[np.ndarray] = field(default=None, repr=False)
    zr: list[float] = field(default_factory=list, repr=False)

    @property
    def rho(self) -> float:
        return measure_rho(self)

    def csv_row(self) -> dict:
        row = dict(self.config)
        row.update(N=self.N, rho=f"{self.rho:.6f}", converged=int(self.converged))
        return row


def measure_rho(report: SolveReport) -> float:
    """rho = exp(ln(|e_N| / |e_0|) / N); 0 if the start is already converged."""
    e = report.errors
    if not e or e[0] == 0.0:
        if report.N == 0:
            return 0.0
        raise ValueError("convergence factor undefined for a zero initial error")
    if report.N == 0:
        return 0.0
    return math.exp(math.log(e[report.N] / e[0]) / report.N)


class _ErrorNorm:
    """Coefficient 2-norm of x - x_exact, M-weighted mean removed if singular."""

    def __init__(self, h: Hierarchy, x_exact):
        self.x_exact = x_exact
        self.singular = h.singular
        if h.singular:
            M = h.M_fine
            self.w = M.matvec(np.ones(h.ndofs))
            self.vol = self.w.sum()

    def __call__(self, x: np.ndarray) -> float:
        e = x - self.x_exact if self.x_exact is not None else x
        if self.singular:
            e = e - (self.w @ e) / self.vol
        return float(np.linalg.norm(e))


def solve_vcycles(
    h: Hierarchy,
    b: np.ndarray,
    x0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 500,
    x_exact: np.ndarray | None = None,
) -> SolveReport:
    """Stationary iteration x <- V(x) until |e_k| <= tol |e_0|.

    If ``x_exact`` is omitted, ``b`` must be zero so the iterate is the error.
    """
    if x_exact is None and np.any(b):
        raise ValueError("pass x_exact when b is nonzero")
    t0 = time.perf_counter()
    norm = _ErrorNorm(h, x_exact)
    x = np.array(x0, dtype=float)
    errors = [norm(x)]
    k = 0
    while errors[-1] > tol * errors[0] and k < max_iter:
        x = vcycle(h, 0, x, b)
        k += 1
        errors.append(norm(x))
        if not errors[-1] <= DIVERGENCE_FACTOR * errors[0]:
            log.warning("V-cycle iteration diverged after %d cycles", k)
            break
    conv = errors[-1] <= tol * errors[0]
    return SolveReport(errors, k, conv, "vcycle", time.perf_counter() - t0, x=x)


def _project_mean(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def solve_mgpcg(
    h: Hierarchy,
    b: np.ndarray,
    x0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 500,
    x_exact: np.ndarray | None = None,
    precondition: bool = True,
) -> SolveReport:
    """Conjugate gradients preconditioned by one V-cycle per iteration.

    On singular (pure Neumann / periodic) problems residuals and
    preconditioned residuals are kept orthogonal to the constant nullspace.
    With ``precondition=False`` this is plain CG.
    """
    if x_exact is None and np.any(b):
        raise ValueError("pass x_exact when b is nonzero")
    t0 = time.perf_counter()
    A = h.A
    norm = _ErrorNorm(h, x_exact)
    proj = _project_mean if h.singular else (lambda v: v)

    def prec(r):
        if not precondition:
            return r.copy()
        return proj(vcycle(h, 0, np.zeros_like(r), r))

    x = np.array(x0, dtype=float)
    errors = [norm(x)]
    r = proj(b - A @ x)
    z = prec(r)
    rz = float(r @ z)
    zr = [rz]
    d = z.copy()
    k = 0
    while errors[-1] > tol * errors[0] and k < max_iter:
        if rz <= 0:
            if rz < 0:
                raise AssemblyError(f"preconditioner is not positive definite ((z, r) = {rz:.3e})")
            break
        Ad = A @ d
        alpha = rz / float(d @ Ad)
        x += alpha * d
        r = proj(r - alpha * Ad)
        k += 1
        errors.append(norm(x))
        z = prec(r)
        rz_new = float(r @ z)
        zr.append(rz_new)
        d = z + (rz_new / rz) * d
        rz = rz_new
    conv = errors[-1] <= tol * errors[0]
    return SolveReport(errors, k, conv, "mgpcg" if precondition else "cg", time.perf_counter() - t0, x=x, zr=zr)


SOLVERS: dict[str, Callable] = {"vcycle": solve_vcycles, "mgpcg": solve_mgpcg}


def convergence_factor(h: Hierarchy, solver: str = "vcycle", seeds=(0, 1, 2), tol: float = 1e-10, max_iter: int = 500):
    """Mean rho over seeded random initial guesses with b = 0.

    Returns (mean rho, list of reports).
    """
    fn = SOLVERS[solver]
    reports = []
    for s in seeds:
        x0 = random_vector(h.ndofs, s)
        rep = fn(h, np.zeros(h.ndofs), x0, tol=tol, max_iter=max_iter)
        rep.x = None
        reports.append(rep)
    return float(np.mean([r.rho for r in reports])), reports
