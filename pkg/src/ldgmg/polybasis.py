"""One-dimensional reference-element tables on [0, 1].

Every tensor-product operator in the package is assembled from the small
matrices built here: Gauss-Lobatto nodal Lagrange bases, Gauss-Legendre
quadrature, 1D mass/derivative/trace tables and the embeddings used by
h- and p-transfers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MAX_DEGREE = 8


def _legendre(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (P_n(x), P_n'(x)) by the three-term recurrence on [-1, 1]."""
    x = np.asarray(x, dtype=float)
    p0 = np.ones_like(x)
    if n == 0:
        return p0, np.zeros_like(x)
    p1 = x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    # derivative from P_n and P_{n-1}; the endpoint formula avoids 0/0
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = n * (x * p1 - p0) / (x * x - 1.0)
    end = np.isclose(np.abs(x), 1.0)
    dp[end] = 0.5 * n * (n + 1) * np.sign(x[end]) ** (n + 1)
    return p1, dp


def gauss_legendre(npts: int, tol: float = 1e-15) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to [0, 1].

    Exact for polynomials of degree ``2 * npts - 1``.
    """
    if npts < 1:
        raise ValueError("need at least one quadrature point")
    k = np.arange(1, npts + 1)
    x = -np.cos(np.pi * (k - 0.25) / (npts + 0.5))
    for _ in range(100):
        pn, dpn = _legendre(npts, x)
        dx = pn / dpn
        x -= dx
        if np.max(np.abs(dx)) < tol:
            break
    _, dpn = _legendre(npts, x)
    w = 2.0 / ((1.0 - x * x) * dpn * dpn)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_lobatto_nodes(p: int, tol: float = 1e-15) -> np.ndarray:
    """The p+1 Gauss-Lobatto points on [0, 1] (roots of (1-x^2) P_p'(x))."""
    if p == 1:
        return np.array([0.0, 1.0])
    # interior points are the roots of P_p'; Newton on P_p'
    k = np.arange(1, p)
    x = -np.cos(np.pi * k / p)
    for _ in range(100):
        _, d1 = _legendre(p, x)
        # P_p'' from the Legendre ODE: (1-x^2) P'' = 2x P' - p(p+1) P
        pn, _ = _legendre(p, x)
        d2 = (2.0 * x * d1 - p * (p + 1) * pn) / (1.0 - x * x)
        dx = d1 / d2
        x -= dx
        if np.max(np.abs(dx)) < tol:
            break
    x = np.concatenate(([-1.0], np.sort(x), [1.0]))
    return 0.5 * (x + 1.0)


def lagrange_eval(nodes: np.ndarray, x, deriv: bool = False) -> np.ndarray:
    """Evaluate the Lagrange basis on ``nodes`` at points ``x``.

    Returns V with ``V[k, j] = l_j(x_k)`` (or ``l_j'(x_k)`` if ``deriv``).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = nodes.size
    V = np.empty((x.size, n))
    for j in range(n):
        others = np.delete(nodes, j)
        denom = np.prod(nodes[j] - others)
        diffs = x[:, None] - others[None, :]
        if not deriv:
            V[:, j] = np.prod(diffs, axis=1) / denom
        else:
            # product rule: sum over the dropped factor
            acc = np.zeros(x.size)
            for m in range(n - 1):
                acc += np.prod(np.delete(diffs, m, axis=1), axis=1)
            V[:, j] = acc / denom
    return V


@dataclass(frozen=True)
class Basis1D:
    """Gauss-Lobatto nodal basis of degree ``p`` on [0, 1] with its tables.

    ``mass1d[i, j] = int l_i l_j``; ``diff1d[i, j] = int l_i l_j'`` (test
    index first); ``deriv[k, j] = l_j'(nodes[k])`` is the exact nodal
    differentiation matrix.
    """

    p: int
    nodes: np.ndarray
    quad_x: np.ndarray
    quad_w: np.ndarray
    mass1d: np.ndarray
    diff1d: np.ndarray
    deriv: np.ndarray
    trace_left: np.ndarray
    trace_right: np.ndarray
    mass1d_inv: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.p + 1

    def eval(self, x, deriv: bool = False) -> np.ndarray:
        return lagrange_eval(self.nodes, x, deriv=deriv)

    def trace(self, side: int) -> np.ndarray:
        """Trace vector at reference coordinate ``side`` (0 or 1)."""
        return self.trace_right if side else self.trace_left


@lru_cache(maxsize=None)
def make_basis(p: int) -> Basis1D:
    if not isinstance(p, (int, np.integer)) or not 1 <= p <= MAX_DEGREE:
        raise ValueError(f"polynomial degree must be an integer in [1, {MAX_DEGREE}], got {p!r}")
    p = int(p)
    nodes = gauss_lobatto_nodes(p)
    qx, qw = gauss_legendre(p + 2)
    V = lagrange_eval(nodes, qx)
    dV = lagrange_eval(nodes, qx, deriv=True)
    mass = V.T @ (qw[:, None] * V)
    mass = 0.5 * (mass + mass.T)
    diff = V.T @ (qw[:, None] * dV)
    deriv = lagrange_eval(nodes, nodes, deriv=True)
    tl = lagrange_eval(nodes, [0.0])[0]
    tr = lagrange_eval(nodes, [1.0])[0]
    for arr in (nodes, qx, qw, mass, diff, deriv, tl, tr):
        arr.setflags(write=False)
    minv = np.linalg.inv(mass)
    minv.setflags(write=False)
    return Basis1D(p, nodes, qx, qw, mass, diff, deriv, tl, tr, minv)


def interval_interp(p: int, a: float, b: float, p_to: int | None = None) -> np.ndarray:
    """Matrix evaluating the degree-``p`` basis at the nodes of the degree
    ``p_to`` basis placed on the sub-interval [a, b] of [0, 1].

    Row k gives the coefficients of l_j evaluated at ``a + (b - a) * x_k``.
    """
    src = make_basis(p)
    dst = make_basis(p if p_to is None else p_to)
    return src.eval(a + (b - a) * dst.nodes)


@lru_cache(maxsize=None)
def _subinterval_gram(p: int, a1: float, b1: float, a2: float, b2: float) -> np.ndarray:
    qx, qw = gauss_legendre(p + 2)
    basis = make_basis(p)
    V1 = basis.eval(a1 + (b1 - a1) * qx)
    V2 = basis.eval(a2 + (b2 - a2) * qx)
    out = V1.T @ (qw[:, None] * V2)
    out.setflags(write=False)
    return out


def subinterval_gram(p: int, iv1: tuple[float, float], iv2: tuple[float, float]) -> np.ndarray:
    """``W[i, j] = int_0^1 l_i(a1 + (b1-a1) t) l_j(a2 + (b2-a2) t) dt``.

    Used for traces of two (possibly differently sized) elements on a shared
    face patch; the patch is parametrized by t in each element's reference
    coordinate.
    """
    return _subinterval_gram(p, float(iv1[0]), float(iv1[1]), float(iv2[0]), float(iv2[1]))


@dataclass(frozen=True)
class Embedding1D:
    """h-refinement matrices for the two children of [0, 1]."""

    p: int
    child_interp: tuple[np.ndarray, np.ndarray]

    def p_embed(self, p_hi: int) -> np.ndarray:
        return p_embed(self.p, p_hi)


def p_embed(p_lo: int, p_hi: int) -> np.ndarray:
    """(p_hi+1) x (p_lo+1) matrix evaluating the degree-p_lo basis at the
    degree-p_hi nodes (exact polynomial embedding)."""
    if p_hi < p_lo:
        raise ValueError(f"cannot embed degree {p_lo} into lower degree {p_hi}")
    return make_basis(p_lo).eval(make_basis(p_hi).nodes)


@lru_cache(maxsize=None)
def make_embedding(p: int) -> Embedding1D:
    make_basis(p)
    left = interval_interp(p, 0.0, 0.5)
    right = interval_interp(p, 0.5, 1.0)
    left.setflags(write=False)
    right.setflags(write=False)
    return Embedding1D(p, (left, right))


def kron_all(mats) -> np.ndarray:
    """Kronecker product of a sequence, first factor acting on dimension 0."""
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out
