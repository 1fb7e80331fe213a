"""LDG operators for the Poisson problem on a Cartesian mesh level.

All operators act on nodal coefficient vectors of the discontinuous
tensor-product space. Gradient and lifting operators are stored
coefficient-to-coefficient (mass already inverted), one scalar operator per
spatial direction. The penalty is kept in mass-weighted form ``MT`` so the
Laplacian is ``A = sum_k G_k^T M G_k + MT``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .blocklinalg import AssemblyError, BlockDiagonal, add_into, from_blocks, matmul, transpose
from .mesh import DIRICHLET, INTERIOR, NEUMANN, BoundarySpec, Face, MeshLevel, faces_of
from .polybasis import gauss_legendre, kron_all, make_basis, subinterval_gram

log = logging.getLogger(__name__)

DEFAULT_SWITCH = (1.0, 1.0 / np.pi, 1.0 / np.pi**2)

Field = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LdgConfig:
    """Flux and penalty parameters.

    ``tau0``/``tauD`` are the scale-free constants; the face penalty is
    ``tau / h`` with ``h`` the smaller adjacent element size, or
    ``penalty_h`` when given (coarse levels inherit the fine-mesh value).
    The one-sided flux uses ``beta = 1/2 sign(switch . n) n``; the trace of
    u on an interior face is taken from the upwind side of ``beta`` and the
    lifting is supported in the downwind element.
    """

    tau0: float = 0.01
    tauD: float = 100.0
    bc: Optional[BoundarySpec] = None
    switch: tuple[float, ...] = DEFAULT_SWITCH
    penalty_h: Optional[float] = None

    def __post_init__(self):
        if self.tau0 < 0:
            raise ValueError("tau0 must be nonnegative")
        if self.tauD < 0:
            raise ValueError("tauD must be nonnegative")
        if any(s == 0 for s in self.switch):
            raise ValueError("switch vector components must be nonzero")

    def beta_sign(self, axis: int) -> int:
        return 1 if self.switch[axis] > 0 else -1

    def resolve_bc(self, level: MeshLevel) -> BoundarySpec:
        return level.bc if self.bc is None else self.bc


class DGSpace:
    """Discontinuous Q_p space on one mesh level, nodal Gauss-Lobatto basis.

    Coefficients are ordered element by element; within an element the
    local multi-index is row-major with dimension 0 slowest.
    """

    def __init__(self, level: MeshLevel, p: int):
        self.level = level
        self.p = p
        self.basis = make_basis(p)
        self.dim = level.dim
        self.k = (p + 1) ** level.dim

    @property
    def nelem(self) -> int:
        return len(self.level)

    @property
    def ndofs(self) -> int:
        return self.nelem * self.k

    @cached_property
    def _local_index(self) -> np.ndarray:
        return np.array(list(np.ndindex(*(self.p + 1,) * self.dim)))

    def node_coords(self) -> np.ndarray:
        """Physical coordinates of every nodal degree of freedom, (ndofs, d)."""
        ref = self.basis.nodes[self._local_index]  # (k, d)
        pts = self.level.corners[:, None, :] + self.level.sizes[:, None, None] * ref[None]
        return pts.reshape(-1, self.dim)

    def interpolate(self, fn: Field) -> np.ndarray:
        """Nodal interpolant of a vectorized function ``fn(x)``, x of shape (N, d)."""
        return np.asarray(fn(self.node_coords()), dtype=float).reshape(-1)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Element index containing each point (first match)."""
        points = np.atleast_2d(points)
        lo = self.level.corners
        hi = lo + self.level.sizes[:, None]
        out = np.full(len(points), -1)
        for i, x in enumerate(points):
            hit = np.flatnonzero(np.all((x >= lo - 1e-14) & (x <= hi + 1e-14), axis=1))
            if hit.size:
                out[i] = hit[0]
        return out

    def evaluate(self, u: np.ndarray, points: np.ndarray, elements: np.ndarray | None = None) -> np.ndarray:
        """Evaluate the piecewise polynomial ``u`` at physical points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if elements is None:
            elements = self.locate(points)
        U = u.reshape(self.nelem, self.k)
        out = np.empty(len(points))
        for i, (x, e) in enumerate(zip(points, elements)):
            ref = (x - self.level.corners[e]) / self.level.sizes[e]
            vals = kron_all([self.basis.eval([r]) for r in ref])[0]
            out[i] = vals @ U[e]
        return out

    def volume_quadrature(self, npts: int | None = None):
        """Tensor Gauss-Legendre rule on every element.

        Returns (points (nelem, nq, d), weights (nelem, nq), basis values (nq, k)).
        """
        npts = self.p + 3 if npts is None else npts
        qx, qw = gauss_legendre(npts)
        idx = np.array(list(np.ndindex(*(npts,) * self.dim)))
        ref = qx[idx]
        wref = np.prod(qw[idx], axis=1)
        V = kron_all([self.basis.eval(qx)] * self.dim)
        h = self.level.sizes
        pts = self.level.corners[:, None, :] + h[:, None, None] * ref[None]
        w = (h**self.dim)[:, None] * wref[None]
        return pts, w, V

    def ones(self) -> np.ndarray:
        return np.ones(self.ndofs)


# ---------------------------------------------------------------------------
# face geometry


@dataclass(frozen=True)
class _Side:
    elem: int
    npos: int  # reference coordinate (0 or 1) of the face along its axis
    ivs: tuple[tuple[float, float], ...]  # tangential sub-intervals in reference coords


def _face_side(level: MeshLevel, face: Face, which: int) -> _Side:
    e = face.minus if which == 0 else face.plus
    corner = level.corners[e]
    h = level.sizes[e]
    if face.plus < 0:
        npos = 1 if face.normal > 0 else 0
    else:
        npos = 1 if which == 0 else 0
    ivs = tuple(
        ((face.lo[t] - corner[t]) / h, (face.lo[t] + face.size - corner[t]) / h)
        for t in range(level.dim)
        if t != face.axis
    )
    return _Side(e, npos, ivs)


@lru_cache(maxsize=4096)
def _face_gram(p: int, dim: int, axis: int, s1: tuple, s2: tuple) -> np.ndarray:
    """Reference face mass between traces of two sides (unit patch area)."""
    basis = make_basis(p)
    npos1, ivs1 = s1
    npos2, ivs2 = s2
    factors = []
    t = 0
    for dd in range(dim):
        if dd == axis:
            factors.append(np.outer(basis.trace(npos1), basis.trace(npos2)))
        else:
            factors.append(subinterval_gram(p, ivs1[t], ivs2[t]))
            t += 1
    out = kron_all(factors)
    out.setflags(write=False)
    return out


class _BlockAccumulator:
    """Collects groups of identical reference blocks with per-entry scale
    factors and sums them into a BSR matrix without materializing one dense
    block per contribution."""

    def __init__(self, nrow: int, ncol: int, shape: tuple[int, int]):
        self.nrow, self.ncol = nrow, ncol
        self.shape = shape
        self.groups: dict[int, list] = {}
        self.refs: dict[int, np.ndarray] = {}

    def add(self, ref: np.ndarray, row: int, col: int, coef: float) -> None:
        key = id(ref)
        if key not in self.groups:
            self.groups[key] = [[], [], []]
            self.refs[key] = ref
        g = self.groups[key]
        g[0].append(row)
        g[1].append(col)
        g[2].append(coef)

    def add_many(self, ref: np.ndarray, rows, cols, coefs) -> None:
        key = id(ref)
        if key not in self.groups:
            self.groups[key] = [[], [], []]
            self.refs[key] = ref
        g = self.groups[key]
        g[0].extend(np.asarray(rows).tolist())
        g[1].extend(np.asarray(cols).tolist())
        g[2].extend(np.asarray(coefs, dtype=float).tolist())

    def tobsr(self) -> sp.bsr_matrix:
        R, C = self.shape
        if not self.groups:
            return from_blocks([], [], np.zeros((0, R, C)), (self.nrow, self.ncol))
        rows = np.concatenate([np.asarray(g[0], dtype=np.int64) for g in self.groups.values()])
        cols = np.concatenate([np.asarray(g[1], dtype=np.int64) for g in self.groups.values()])
        keys = np.unique(rows * self.ncol + cols)
        data = np.zeros((len(keys), R, C))
        for gk, (grow, gcol, gcoef) in self.groups.items():
            ref = self.refs[gk]
            pos = np.searchsorted(keys, np.asarray(grow, dtype=np.int64) * self.ncol + np.asarray(gcol, dtype=np.int64))
            coef = np.asarray(gcoef)
            for start in range(0, len(pos), 4096):
                sl = slice(start, start + 4096)
                vals = coef[sl, None, None] * ref[None]
                ps = pos[sl]
                if len(np.unique(ps)) == len(ps):
                    data[ps] += vals
                else:
                    np.add.at(data, ps, vals)
        urow = keys // self.ncol
        indices = (keys % self.ncol).astype(np.int32)
        indptr = np.zeros(self.nrow + 1, dtype=np.int32)
        np.cumsum(np.bincount(urow, minlength=self.nrow), out=indptr[1:])
        return sp.bsr_matrix((data, indices, indptr), shape=(self.nrow * R, self.ncol * C))


def _penalty_tau(cfg: LdgConfig, face: Face, tilde: float) -> float:
    h = cfg.penalty_h if cfg.penalty_h is not None else face.size
    return tilde / h


# ---------------------------------------------------------------------------
# operators


def assemble_mass(level: MeshLevel, p: int) -> BlockDiagonal:
    """Elemental mass matrices h^d (m x ... x m)."""
    basis = make_basis(p)
    ref = kron_all([basis.mass1d] * level.dim)
    return BlockDiagonal(level.sizes[:, None, None] ** level.dim * ref[None])


def _broken_gradient_ref(p: int, dim: int, axis: int, mass_weighted: bool) -> np.ndarray:
    basis = make_basis(p)
    if mass_weighted:
        return kron_all([basis.diff1d if dd == axis else basis.mass1d for dd in range(dim)])
    return kron_all([basis.deriv if dd == axis else np.eye(p + 1) for dd in range(dim)])


def assemble_broken_gradient(level: MeshLevel, p: int) -> list[sp.bsr_matrix]:
    """Elementwise exact gradient, one block-diagonal operator per direction."""
    n = len(level)
    out = []
    for axis in range(level.dim):
        ref = _broken_gradient_ref(p, level.dim, axis, mass_weighted=False)
        blocks = ref[None] / level.sizes[:, None, None]
        out.append(from_blocks(np.arange(n), np.arange(n), blocks, (n, n)))
    return out


def _lifting_weighted(level: MeshLevel, p: int, cfg: LdgConfig, faces: list[Face]) -> list[_BlockAccumulator]:
    """Mass-weighted lifting: (L u, w) = -int_G0 [u].({w} + beta[w]) - int_GD u w.n."""
    n = len(level)
    k = (p + 1) ** level.dim
    accs = [_BlockAccumulator(n, n, (k, k)) for _ in range(level.dim)]
    for f in faces:
        if f.kind == NEUMANN:
            continue
        area = f.area
        acc = accs[f.axis]
        sm = _face_side(level, f, 0)
        if f.kind == DIRICHLET:
            ref = _face_gram(p, level.dim, f.axis, (sm.npos, sm.ivs), (sm.npos, sm.ivs))
            acc.add(ref, sm.elem, sm.elem, -f.normal * area)
            continue
        sp_ = _face_side(level, f, 1)
        # one-sided rule: the face value of u is taken upwind of beta, so the
        # lifting lands entirely in the downwind element
        tgt = sp_ if cfg.beta_sign(f.axis) > 0 else sm
        key_t = (tgt.npos, tgt.ivs)
        acc.add(_face_gram(p, level.dim, f.axis, key_t, (sm.npos, sm.ivs)), tgt.elem, sm.elem, -area)
        acc.add(_face_gram(p, level.dim, f.axis, key_t, (sp_.npos, sp_.ivs)), tgt.elem, sp_.elem, area)
    return accs


def assemble_lifting(level: MeshLevel, p: int, cfg: LdgConfig | None = None, mass: BlockDiagonal | None = None) -> list[sp.bsr_matrix]:
    """Lifting operator L, coefficient-to-coefficient, one per direction."""
    cfg = cfg or LdgConfig()
    mass = mass or assemble_mass(level, p)
    faces = faces_of(level, cfg.resolve_bc(level))
    return [mass.left_multiply(acc.tobsr(), inverse=True, inplace=True) for acc in _lifting_weighted(level, p, cfg, faces)]


def iter_gradient(level: MeshLevel, p: int, cfg: LdgConfig | None = None, mass: BlockDiagonal | None = None):
    """Yield the components of G = broken gradient + lifting one at a time."""
    cfg = cfg or LdgConfig()
    mass = mass or assemble_mass(level, p)
    faces = faces_of(level, cfg.resolve_bc(level))
    accs = _lifting_weighted(level, p, cfg, faces)
    n = len(level)
    for axis in range(level.dim):
        acc = accs[axis]
        ref = _broken_gradient_ref(p, level.dim, axis, mass_weighted=True)
        acc.add_many(ref, np.arange(n), np.arange(n), level.sizes ** (level.dim - 1))
        accs[axis] = None
        yield mass.left_multiply(acc.tobsr(), inverse=True, inplace=True)


def assemble_gradient(level: MeshLevel, p: int, cfg: LdgConfig | None = None, mass: BlockDiagonal | None = None) -> list[sp.bsr_matrix]:
    """Discrete gradient G = broken gradient + lifting (coefficient form)."""
    return list(iter_gradient(level, p, cfg, mass))


def discrete_gradient(broken: list[sp.bsr_matrix], lifting: list[sp.bsr_matrix]) -> list[sp.bsr_matrix]:
    """Componentwise G = broken gradient + lifting."""
    out = []
    for b, l in zip(broken, lifting):
        g = (b + l).tobsr(blocksize=b.blocksize)
        g.sort_indices()
        out.append(g)
    return out


def assemble_penalties(level: MeshLevel, p: int, cfg: LdgConfig | None = None, weighted: bool = True):
    """Face penalty matrices (E0, ED).

    With ``weighted`` the mass-weighted forms int [u].[v] and int_GD u v are
    returned; otherwise they are mass-inverted (coefficient form).
    """
    cfg = cfg or LdgConfig()
    faces = faces_of(level, cfg.resolve_bc(level))
    n = len(level)
    k = (p + 1) ** level.dim
    e0 = _BlockAccumulator(n, n, (k, k))
    ed = _BlockAccumulator(n, n, (k, k))
    _add_penalty_faces(level, p, faces, e0, ed, lambda f, t: 1.0)
    E0, ED = e0.tobsr(), ed.tobsr()
    if not weighted:
        mass = assemble_mass(level, p)
        E0 = mass.left_multiply(E0, inverse=True)
        ED = mass.left_multiply(ED, inverse=True)
    return E0, ED


def _add_penalty_faces(level, p, faces, acc0, accd, weight) -> None:
    d = level.dim
    for f in faces:
        if f.kind == NEUMANN:
            continue
        area = f.area
        sm = _face_side(level, f, 0)
        km = (sm.npos, sm.ivs)
        if f.kind == DIRICHLET:
            accd.add(_face_gram(p, d, f.axis, km, km), sm.elem, sm.elem, weight(f, "D") * area)
            continue
        sp_ = _face_side(level, f, 1)
        kp = (sp_.npos, sp_.ivs)
        w = weight(f, "0") * area
        acc0.add(_face_gram(p, d, f.axis, km, km), sm.elem, sm.elem, w)
        acc0.add(_face_gram(p, d, f.axis, kp, kp), sp_.elem, sp_.elem, w)
        acc0.add(_face_gram(p, d, f.axis, km, kp), sm.elem, sp_.elem, -w)
        acc0.add(_face_gram(p, d, f.axis, kp, km), sp_.elem, sm.elem, -w)


def assemble_weighted_penalty(level: MeshLevel, p: int, cfg: LdgConfig | None = None) -> sp.bsr_matrix:
    """M T = tau0 E0 + tauD ED in mass-weighted form, tau = tilde / h per face."""
    cfg = cfg or LdgConfig()
    faces = faces_of(level, cfg.resolve_bc(level))
    if cfg.tauD == 0 and any(f.kind == DIRICHLET for f in faces):
        raise ValueError("Dirichlet faces require a positive Dirichlet penalty tauD")
    n = len(level)
    k = (p + 1) ** level.dim
    acc = _BlockAccumulator(n, n, (k, k))

    def weight(f, which):
        return _penalty_tau(cfg, f, cfg.tau0 if which == "0" else cfg.tauD)

    _add_penalty_faces(level, p, faces, acc, acc, weight)
    return acc.tobsr()


def laplacian(M: BlockDiagonal, G: list[sp.bsr_matrix], MT: sp.bsr_matrix, check: bool = True, overwrite: bool = False) -> sp.bsr_matrix:
    """A = sum_k G_k^T M G_k + M T.

    With ``overwrite`` the storage of ``MT`` is reused for A (MT is then
    invalid); this saves one full-size matrix on large problems.
    """
    A = MT if overwrite else MT.copy()
    for Gk in G:
        A = add_gradient_term(A, M, Gk)
    A.sort_indices()
    if check:
        check_symmetric(A)
    return A


def add_gradient_term(A: sp.bsr_matrix, M: BlockDiagonal, Gk: sp.bsr_matrix) -> sp.bsr_matrix:
    """A + G_k^T M G_k (in A's storage when the pattern allows)."""
    prod = matmul(transpose(Gk), M.left_multiply(Gk))
    return add_into(A, prod)


def check_symmetric(A, tol: float = 1e-10, seed: int = 12345) -> float:
    """Randomized symmetry test |y.Ax - x.Ay| relative to |x||y||A|; raises on failure."""
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.uniform(-1, 1, A.shape[1])
    y = rng.uniform(-1, 1, A.shape[0])
    Ax, Ay = A @ x, A @ y
    gap = abs(y @ Ax - x @ Ay) / max(np.linalg.norm(Ax) * np.linalg.norm(y), 1e-300)
    if gap > tol:
        raise AssemblyError(f"operator is not symmetric (relative gap {gap:.3e})")
    return gap


@dataclass
class LevelOperators:
    """Mass, discrete gradient, mass-weighted penalty and Laplacian on a level."""

    M: BlockDiagonal
    G: list[sp.bsr_matrix]
    MT: Optional[sp.bsr_matrix]
    A: Optional[sp.bsr_matrix]
    h_level: float
    p: int
    space: Optional[DGSpace] = None

    @property
    def T(self) -> sp.bsr_matrix:
        """Penalty in coefficient form, M^-1 (tau0 E0 + tauD ED)."""
        return self.M.left_multiply(self.MT, inverse=True)

    @property
    def D(self) -> list[sp.bsr_matrix]:
        """Discrete divergence components D_k = -M^-1 G_k^T M."""
        return [self.M.left_multiply(self.M.right_multiply(transpose(Gk)), inverse=True) * -1.0 for Gk in self.G]

    @property
    def ndofs(self) -> int:
        return self.M.shape[0]

    def build_laplacian(self, check: bool = True, release: bool = False) -> sp.bsr_matrix:
        """Assemble A from (M, G, MT). With ``release`` the gradient and
        penalty storage is handed over to A and dropped."""
        if self.A is None:
            self.A = laplacian(self.M, self.G, self.MT, check=check, overwrite=release)
        if release:
            self.G, self.MT = [], None
        return self.A


def assemble_level(level: MeshLevel, p: int, cfg: LdgConfig | None = None, check: bool = True, laplace: bool = True) -> LevelOperators:
    """Assemble M, G, M T and (unless ``laplace`` is false) A on one mesh level."""
    cfg = cfg or LdgConfig()
    bc = cfg.resolve_bc(level)
    faces = faces_of(level, bc)
    if cfg.tau0 == 0 and not any(f.kind == DIRICHLET for f in faces):
        log.warning("tau0 = 0 without Dirichlet faces: the Laplacian may have extra null modes")
    M = assemble_mass(level, p)
    G = assemble_gradient(level, p, cfg, M)
    MT = assemble_weighted_penalty(level, p, cfg)
    A = laplacian(M, G, MT, check=check) if laplace else None
    return LevelOperators(M, G, MT, A, level.h_min, p, DGSpace(level, p))


# ---------------------------------------------------------------------------
# right-hand side


def _face_quadrature(space: DGSpace, face: Face, npts: int):
    """Quadrature points (nq, d), weights (nq,) and minus-side traces (nq, k)."""
    level, p, d = space.level, space.p, space.dim
    qx, qw = gauss_legendre(npts)
    tang = [t for t in range(d) if t != face.axis]
    idx = np.array(list(np.ndindex(*(npts,) * (d - 1)))) if d > 1 else np.zeros((1, 0), int)
    w = np.prod(qw[idx], axis=1) * face.area
    pts = np.empty((len(idx), d))
    pts[:, face.axis] = face.lo[face.axis]
    side = _face_side(level, face, 0)
    for j, t in enumerate(tang):
        pts[:, t] = face.lo[t] + face.size * qx[idx[:, j]]
    basis = space.basis
    # trace values: product of 1D factors, dimension 0 slowest
    vals = np.ones((len(idx), 1))
    t_i = 0
    for dd in range(d):
        if dd == face.axis:
            f1 = np.broadcast_to(basis.trace(side.npos), (len(idx), p + 1))
        else:
            a, b = side.ivs[t_i]
            f1 = basis.eval(a + (b - a) * qx[idx[:, t_i]])
            t_i += 1
        vals = (vals[:, :, None] * f1[:, None, :]).reshape(len(idx), -1)
    return pts, w, vals


@dataclass
class RhsData:
    f: Optional[Field] = None
    g: Optional[Field] = None
    h: Optional[Field] = None
    ell: Optional[np.ndarray] = None
    JD: Optional[list[np.ndarray]] = None
    JN: Optional[np.ndarray] = None
    aD: Optional[np.ndarray] = None


def assemble_rhs(
    ops: LevelOperators,
    f: Field | None = None,
    g: Field | None = None,
    h: Field | None = None,
    cfg: LdgConfig | None = None,
    quad_extra: int = 3,
) -> RhsData:
    """Right-hand side b of A u = b for data (f, g, h).

    b = (f, v) - (J_D(g), G v) + (J_N(h), v) + tauD (a_D(g), v), all
    mass-weighted; the auxiliary vectors are returned mass-weighted too.
    """
    cfg = cfg or LdgConfig()
    space = ops.space
    level, k, d = space.level, space.k, space.dim
    npts = space.p + 1 + quad_extra
    b = np.zeros(space.ndofs)
    if f is not None:
        pts, w, V = space.volume_quadrature(npts)
        fv = np.asarray(f(pts.reshape(-1, d)), dtype=float).reshape(pts.shape[:2])
        b += ((fv * w) @ V).ravel()
    faces = faces_of(level, cfg.resolve_bc(level))
    dirichlet = [fc for fc in faces if fc.kind == DIRICHLET]
    neumann = [fc for fc in faces if fc.kind == NEUMANN]
    if g is not None and not dirichlet:
        warnings.warn("Dirichlet data given but the mesh has no Dirichlet faces; ignored", stacklevel=2)
    JD = [np.zeros(space.ndofs) for _ in range(d)]
    aD = np.zeros(space.ndofs)
    JN = np.zeros(space.ndofs)
    if g is not None:
        for fc in dirichlet:
            pts, w, V = _face_quadrature(space, fc, npts)
            gv = np.asarray(g(pts), dtype=float).reshape(-1)
            loc = (gv * w) @ V
            sl = slice(fc.minus * k, (fc.minus + 1) * k)
            JD[fc.axis][sl] += fc.normal * loc
            aD[sl] += _penalty_tau(cfg, fc, cfg.tauD) * loc
    if h is not None:
        for fc in neumann:
            pts, w, V = _face_quadrature(space, fc, npts)
            hv = np.asarray(h(pts), dtype=float).reshape(-1)
            JN[fc.minus * k:(fc.minus + 1) * k] += (hv * w) @ V
    b += JN + aD
    for Gk, jk in zip(ops.G, JD):
        b -= Gk.T @ jk
    return RhsData(f, g, h, b, JD, JN, aD)


def l2_error(space: DGSpace, u: np.ndarray, exact: Field, npts: int | None = None) -> float:
    """||u_h - exact||_L2 by tensor Gauss-Legendre quadrature."""
    npts = space.p + 4 if npts is None else npts
    pts, w, V = space.volume_quadrature(npts)
    uh = u.reshape(space.nelem, space.k) @ V.T
    ex = np.asarray(exact(pts.reshape(-1, space.dim)), dtype=float).reshape(uh.shape)
    return float(np.sqrt(np.sum(w * (uh - ex) ** 2)))


def l2_project(space: DGSpace, fn: Field, M: BlockDiagonal | None = None, npts: int | None = None) -> np.ndarray:
    """Elementwise L2 projection of ``fn`` onto the space."""
    npts = space.p + 4 if npts is None else npts
    M = M or assemble_mass(space.level, space.p)
    pts, w, V = space.volume_quadrature(npts)
    fv = np.asarray(fn(pts.reshape(-1, space.dim)), dtype=float).reshape(pts.shape[:2])
    return M.solve(((fv * w) @ V).ravel())
