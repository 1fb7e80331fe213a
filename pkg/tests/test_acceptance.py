"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Convergence factors are seed means over (0, 1, 2) with b = 0 and tol 1e-10.
Each (mesh, degree, mode) hierarchy is built once per session and measured
with both solvers; only the resulting numbers are cached.
"""

from functools import lru_cache

import numpy as np
import pytest

from conftest import record
from oracles import weak_form_gradient
from ldgmg.blocklinalg import rel_frobenius
from ldgmg.experiments import TABLES, solve_manufactured
from ldgmg.ldg import (
    DGSpace,
    LdgConfig,
    assemble_broken_gradient,
    assemble_gradient,
    assemble_level,
    assemble_lifting,
    assemble_mass,
    assemble_penalties,
    discrete_gradient,
)
from ldgmg.mesh import DIRICHLET, NEUMANN, PERIODIC, build_adaptive, build_uniform, corner_refiner
from ldgmg.multigrid import build_hierarchy, convergence_factor
from ldgmg.transfer import build_h_interpolation, build_restriction, coarse_mass, rat

SEEDS = (0, 1, 2)
TOL = 1e-10
RHO_TOL = 0.05
N_FLUX_2D = (4, 8, 16, 32, 64, 128, 256)
N_PRIMAL_2D = (4, 8, 16, 32, 64, 128)
DEGREES = (1, 2, 3)


@lru_cache(maxsize=None)
def rho(dim, n, p, mode, grid="uniform", bc=NEUMANN, mgkind="h", tau0=0.01, tauD=100.0, solvers=("vcycle", "mgpcg")):
    """Mean rho per solver: {solver: (rho, all converged)}."""
    if grid == "uniform":
        mesh = build_uniform(dim, n, bc)
    else:
        mesh = build_adaptive(dim, corner_refiner(), n.bit_length() - 1, bc)
    h = build_hierarchy(mesh, p, LdgConfig(tau0=tau0, tauD=tauD), mode, mgkind, keep_level_operators=False)
    out = {}
    for s in solvers:
        r, reps = convergence_factor(h, s, seeds=SEEDS, tol=TOL, max_iter=1000)
        out[s] = (r, all(rep.converged for rep in reps))
    return out


def _fmt(seq):
    return "[" + ", ".join(f"{v:.3f}" for v in seq) + "]"


# 1 -------------------------------------------------------------------------


def test_criterion_01_flux_vcycle_2d():
    ref = TABLES["S1"]
    lines, ok = [], True
    for p in DEGREES:
        seq = [rho(2, n, p, "flux")["vcycle"][0] for n in N_FLUX_2D]
        dev = max(abs(r - ref.reference("flux", p, n)) for r, n in zip(seq, N_FLUX_2D))
        spread = max(seq) - min(seq)
        ok &= dev <= RHO_TOL and spread <= RHO_TOL
        lines.append(f"p={p} {_fmt(seq)} max|d|={dev:.3f} spread={spread:.3f}")
    record(1, ok, "flux V-cycle 2D n=4..256: " + "; ".join(lines))
    assert ok


# 2 -------------------------------------------------------------------------


def test_criterion_02_primal_degradation():
    lines, ok = [], True
    for p in DEGREES:
        seq = [rho(2, n, p, "primal")["vcycle"][0] for n in N_PRIMAL_2D]
        mono = all(b >= a - 0.02 for a, b in zip(seq, seq[1:]))
        ok &= mono
        lines.append(f"p={p} {_fmt(seq)}{'' if mono else ' NOT monotone'}")
    last = rho(2, 128, 1, "primal")["vcycle"][0]
    ok &= last >= 0.70
    record(2, ok, f"primal V-cycle n=4..128, rho(p=1,n=128)={last:.3f} (>= 0.70): " + "; ".join(lines))
    assert ok


# 3 -------------------------------------------------------------------------


def test_criterion_03_mgpcg_improvement():
    worst, ok = -1.0, True
    bad = []
    configs = [(n, p, "flux") for p in DEGREES for n in N_FLUX_2D] + [(n, p, "primal") for p in DEGREES for n in N_PRIMAL_2D]
    for n, p, mode in configs:
        r = rho(2, n, p, mode)
        gap = r["mgpcg"][0] - r["vcycle"][0]
        worst = max(worst, gap)
        if gap > 0.02:
            bad.append((mode, p, n))
    ok = not bad
    target = rho(2, 128, 3, "flux")["mgpcg"][0]
    ok &= abs(target - 0.07) <= 0.04
    record(3, ok, f"{len(configs)} configs, max(rho_mgpcg - rho_v)={worst:.3f} (<= 0.02){' violators ' + str(bad) if bad else ''}; flux MGPCG p=3 n=128 rho={target:.3f} (0.07 +- 0.04)")
    assert ok


# 4 -------------------------------------------------------------------------


def test_criterion_04_flux_mgpcg_3d():
    ref = TABLES["S4"]
    lines, ok = [], True
    for p in DEGREES:
        seq = [rho(3, n, p, "flux", solvers=("mgpcg",))["mgpcg"][0] for n in (4, 8, 16)]
        dev = max(abs(r - ref.reference("flux", p, n)) for r, n in zip(seq, (4, 8, 16)))
        ok &= dev <= RHO_TOL
        lines.append(f"p={p} {_fmt(seq)} max|d|={dev:.3f}")
    record(4, ok, "flux MGPCG 3D n=4,8,16: " + "; ".join(lines))
    assert ok


# 5 -------------------------------------------------------------------------


def test_criterion_05_p_multigrid():
    flux = rho(2, 64, 4, "flux", mgkind="p", solvers=("mgpcg",))["mgpcg"][0]
    primal = rho(2, 64, 4, "primal", mgkind="p", solvers=("mgpcg",))["mgpcg"][0]
    ok = abs(flux - 0.08) <= 0.05 and abs(primal - 0.57) <= 0.10
    record(5, ok, f"p-halving 2D n=64 p=4 MGPCG: flux {flux:.3f} (0.08 +- 0.05), primal {primal:.3f} (0.57 +- 0.10)")
    assert ok


# 6 -------------------------------------------------------------------------


def _level_gap(mesh, lev, cfg_c):
    ref = assemble_level(mesh.levels[lev.mesh_index], lev.p, cfg_c)
    ops = lev.ops
    gaps = [rel_frobenius(ops.M.to_bsr(), ref.M.to_bsr()), rel_frobenius(lev.A, ref.A)]
    gaps += [rel_frobenius(g, gr) for g, gr in zip(ops.G, ref.G)]
    if ref.MT.nnz:
        gaps.append(rel_frobenius(ops.MT, ref.MT))
    return max(gaps)


def test_criterion_06_geometric_equivalence():
    cases = [(2, n, p) for n in (4, 8, 16) for p in DEGREES] + [(3, n, p) for n in (4, 8) for p in (1, 2)]
    worst = 0.0
    for dim, n, p in cases:
        for bc in (NEUMANN, DIRICHLET):
            mesh = build_uniform(dim, n, bc)
            h = build_hierarchy(mesh, p, LdgConfig(), "flux", keep_level_operators=True)
            cfg_c = LdgConfig(penalty_h=mesh.finest.h_min)
            for lev in h.levels:
                worst = max(worst, _level_gap(mesh, lev, cfg_c))
    ok = worst <= 1e-11
    record(6, ok, f"{len(cases) * 2} hierarchies, every level: max rel Frobenius gap {worst:.2e} (<= 1e-11)")
    assert ok


# 7 -------------------------------------------------------------------------


def _rel0(C, ref, fine):
    d = np.linalg.norm((C - ref).toarray())
    return d / (np.linalg.norm(ref.toarray()) or np.linalg.norm(fine.toarray()))


def test_criterion_07_transfer_identities():
    worst = {"RI": 0.0, "const": 0.0, "mass": 0.0, "rat": 0.0}
    for dim, n, p in [(2, 4, 1), (2, 8, 2), (2, 8, 3), (3, 4, 1), (3, 4, 2)]:
        mesh = build_uniform(dim, n, DIRICHLET)
        fine, coarse = mesh.levels[0], mesh.levels[1]
        I = build_h_interpolation(fine, coarse, mesh.parents[0], p)
        M_f, M_c = assemble_mass(fine, p), assemble_mass(coarse, p)
        R = build_restriction(I, M_f, M_c)
        worst["RI"] = max(worst["RI"], np.abs((R @ I).toarray() - np.eye(I.shape[1])).max())
        worst["const"] = max(worst["const"], np.abs(I @ np.ones(I.shape[1]) - 1).max())
        worst["mass"] = max(worst["mass"], np.abs(coarse_mass(I, M_f).blocks - M_c.blocks).max() / np.abs(M_c.blocks).max())
        cfg = LdgConfig()
        pairs = list(zip(assemble_broken_gradient(fine, p), assemble_broken_gradient(coarse, p)))
        pairs += list(zip(assemble_lifting(fine, p, cfg, M_f), assemble_lifting(coarse, p, cfg, M_c)))
        pairs += list(zip(assemble_gradient(fine, p, cfg, M_f), assemble_gradient(coarse, p, cfg, M_c)))
        pairs.append((assemble_penalties(fine, p, weighted=False)[0], assemble_penalties(coarse, p, weighted=False)[0]))
        for Xf, Xc in pairs:
            worst["rat"] = max(worst["rat"], _rel0(rat(Xf, I, R), Xc, Xf))
    # product witness on n=4 -> 2, p=1
    mesh = build_uniform(2, 4, NEUMANN)
    fine, coarse = mesh.levels[0], mesh.levels[1]
    I = build_h_interpolation(fine, coarse, mesh.parents[0], 1)
    M_f = assemble_mass(fine, 1)
    R = build_restriction(I, M_f)
    G = assemble_gradient(fine, 1, mass=M_f)
    D = [M_f.left_multiply(M_f.right_multiply(Gk.T.tobsr()), inverse=True) * -1.0 for Gk in G]
    lhs = sum((rat((Dk @ Gk).tobsr(), I, R) for Dk, Gk in zip(D, G)), start=0 * rat(G[0], I, R))
    rhs = sum(((rat(Dk, I, R) @ rat(Gk, I, R)) for Dk, Gk in zip(D, G)), start=0 * rat(G[0], I, R))
    gap = float(np.linalg.norm((lhs - rhs).toarray()))
    ok = worst["RI"] <= 1e-12 and worst["const"] <= 1e-12 and worst["mass"] <= 1e-13 and worst["rat"] <= 1e-12 and gap > 1e-8
    record(7, ok, "R I = Id {RI:.1e}, I 1 = 1 {const:.1e}, coarse mass {mass:.1e}, RAT of grad/lift/G/E0 {rat:.1e}; ".format(**worst) + f"product gap {gap:.3e} (> 1e-8)")
    assert ok


# 8 -------------------------------------------------------------------------


N_TAU = (4, 8, 16, 32, 64, 128)


def test_criterion_08_penalty_studies():
    def seq(**kw):
        return [rho(2, n, 2, "flux", solvers=("mgpcg",), **kw)["mgpcg"][0] for n in N_TAU]

    t0_small = seq(bc=PERIODIC, tau0=0.01)
    t0_big = seq(bc=PERIODIC, tau0=1000.0)
    td_small = seq(bc=DIRICHLET, tauD=0.01)
    td_big = seq(bc=DIRICHLET, tauD=100.0)
    checks = [
        max(t0_small) - min(t0_small) <= 0.05,
        t0_big[-1] - t0_big[0] >= 0.2,
        td_small[-1] - td_small[0] >= 0.2,
        max(td_big) - min(td_big) <= 0.05,
    ]
    ok = all(checks)
    record(8, ok, f"MGPCG p=2: tau0=0.01 {_fmt(t0_small)}, tau0=1000 {_fmt(t0_big)}, tauD=0.01 {_fmt(td_small)}, tauD=100 {_fmt(td_big)}")
    assert ok


# 9 -------------------------------------------------------------------------


N_AMR = (16, 32, 64, 128, 256)


def test_criterion_09_adaptive_corner():
    lines, ok = [], True
    for p in DEGREES:
        flux = [rho(2, n, p, "flux", grid="adaptive", solvers=("mgpcg",))["mgpcg"][0] for n in N_AMR]
        primal = [rho(2, n, p, "primal", grid="adaptive", solvers=("mgpcg",))["mgpcg"][0] for n in N_AMR]
        ok &= max(flux) <= 0.25 and all(pr > fl for pr, fl in zip(primal[-2:], flux[-2:]))
        lines.append(f"p={p} flux {_fmt(flux)} primal {_fmt(primal)}")
    record(9, ok, "corner preset MGPCG 1/h=16..256: " + "; ".join(lines))
    assert ok


# 10 ------------------------------------------------------------------------


def test_criterion_10_discretization_accuracy():
    ns = (8, 16, 32, 64)
    lines, ok = [], True
    for p in (1, 2):
        err = [solve_manufactured(2, n, p, "sin") for n in ns]
        orders = [np.log2(a / b) for a, b in zip(err, err[1:])]
        ok &= min(orders) >= p + 0.9
        lines.append(f"p={p} orders {_fmt(orders)}")
    poly = max(solve_manufactured(dim, 4 if dim == 2 else 2, p, "poly") for dim in (2, 3) for p in DEGREES)
    ok &= poly <= 1e-10
    record(10, ok, "sin-product L2 " + "; ".join(lines) + f"; degree <= p polynomials max error {poly:.1e}")
    assert ok


# 11 ------------------------------------------------------------------------


def _lanczos_min(A, k=40, seed=0):
    """Smallest Ritz value of A from a k-step Lanczos run with full
    reorthogonalization."""
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    Q = np.zeros((n, k))
    q = rng.standard_normal(n)
    Q[:, 0] = q / np.linalg.norm(q)
    alpha, beta = [], []
    for j in range(k):
        w = A @ Q[:, j]
        alpha.append(Q[:, j] @ w)
        w -= Q[:, : j + 1] @ (Q[:, : j + 1].T @ w)
        if j + 1 == k:
            break
        b = np.linalg.norm(w)
        if b < 1e-14:
            break
        beta.append(b)
        Q[:, j + 1] = w / b
    m = len(alpha)
    T = np.diag(alpha) + np.diag(beta[: m - 1], 1) + np.diag(beta[: m - 1], -1)
    return np.linalg.eigvalsh(T)[0], np.linalg.eigvalsh(T)[-1]


def test_criterion_11_operator_sanity():
    worst = {"sym": 0.0, "ritz": np.inf, "rows": 0.0, "adj": 0.0, "sw": 0.0, "weak": 0.0}
    cases = [
        (build_uniform(2, 8, NEUMANN).finest, 2, NEUMANN),
        (build_uniform(2, 8, DIRICHLET).finest, 3, DIRICHLET),
        (build_uniform(2, 4, PERIODIC).finest, 2, PERIODIC),
        (build_uniform(3, 4, NEUMANN).finest, 1, NEUMANN),
        (build_adaptive(2, corner_refiner(), 5).finest, 2, NEUMANN),
    ]
    rng = np.random.default_rng(11)
    for lev, p, bc in cases:
        cfg = LdgConfig()
        ops = assemble_level(lev, p, cfg)
        A = ops.A
        Ad = A.toarray()
        scale = np.abs(Ad).max()
        worst["sym"] = max(worst["sym"], np.abs(Ad - Ad.T).max() / scale)
        lo, hi = _lanczos_min(A)
        worst["ritz"] = min(worst["ritz"], lo / hi)
        if bc != DIRICHLET:
            worst["rows"] = max(worst["rows"], np.abs(A @ np.ones(ops.ndofs)).max() / scale)
        q, v = rng.standard_normal((2, ops.ndofs))
        space = DGSpace(lev, p)
        G2 = discrete_gradient(assemble_broken_gradient(lev, p), assemble_lifting(lev, p, cfg, ops.M))
        for k, (Gk, Dk) in enumerate(zip(ops.G, ops.D)):
            lhs = q @ ops.M.matvec(Gk @ v)
            rhs = -(Dk @ q) @ ops.M.matvec(v)
            worst["adj"] = max(worst["adj"], abs(lhs - rhs) / (np.linalg.norm(ops.M.matvec(q)) * np.linalg.norm(Gk @ v)))
            worst["sw"] = max(worst["sw"], rel_frobenius(G2[k], Gk))
            if lev.dim == 2 or k == 0:
                strong = q @ ops.M.matvec(Gk @ v)
                weak = weak_form_gradient(space, v, q, k, bc)
                worst["weak"] = max(worst["weak"], abs(strong - weak) / (np.linalg.norm(ops.M.matvec(q)) * np.linalg.norm(Gk @ v)))
    ok = (
        worst["sym"] <= 1e-12
        and worst["ritz"] >= -1e-12
        and worst["rows"] <= 1e-11
        and worst["adj"] <= 1e-12
        and worst["sw"] <= 1e-12
        and worst["weak"] <= 1e-12
    )
    record(
        11,
        ok,
        "symmetry {sym:.1e}, min Ritz/max {ritz:.1e} (>= 0), Neumann/periodic row sums {rows:.1e}, "
        "D-adjointness {adj:.1e}, strong-weak vs assembled {sw:.1e}, vs weak-form quadrature {weak:.1e}".format(**worst),
    )
    assert ok
