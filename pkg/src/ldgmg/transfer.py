"""Interpolation, adjoint restriction and Galerkin (RAT) coarsening.

Interpolation ``I`` maps coarse coefficients to fine coefficients by exact
polynomial injection, either between nested mesh levels (same degree) or
between degrees on one mesh. Restriction is the mass-adjoint
``R = M_c^-1 I^T M_f``; ``C(X) = R X I``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .blocklinalg import BlockDiagonal, BlockDimensionError, from_blocks, matmul, transpose
from .mesh import MeshLevel
from .polybasis import kron_all, make_embedding, p_embed


@dataclass
class TransferPair:
    """Coarse-to-fine interpolation with its mass-adjoint restriction."""

    I: sp.bsr_matrix
    kind: str  # "h" or "p"
    fine: tuple[int, int]  # (mesh level index in the hierarchy, degree)
    coarse: tuple[int, int]
    M_f: Optional[BlockDiagonal] = None
    M_c: Optional[BlockDiagonal] = None

    @cached_property
    def IT(self) -> sp.bsr_matrix:
        return transpose(self.I)

    @cached_property
    def R(self) -> sp.bsr_matrix:
        if self.M_f is None:
            raise ValueError("restriction needs the fine mass matrix")
        return build_restriction(self.I, self.M_f, self.M_c)


def build_h_interpolation(fine: MeshLevel, coarse: MeshLevel, parents: np.ndarray, p: int) -> sp.bsr_matrix:
    """Injection from ``coarse`` to ``fine`` (nested, same degree).

    Fine elements that coincide with their coarse element get an identity
    block; true children get the Kronecker product of 1D child maps.
    """
    parents = np.asarray(parents)
    if len(parents) != len(fine):
        raise BlockDimensionError("parent map does not match the fine level")
    emb = make_embedding(p)
    k = (p + 1) ** fine.dim
    cache: dict[tuple, np.ndarray] = {}
    blocks = np.empty((len(fine), k, k))
    for i, (e, c) in enumerate(zip(fine.elements, parents)):
        if c < 0 or c >= len(coarse):
            raise RuntimeError(f"fine element {i} has no parent")
        ce = coarse.elements[c]
        if not ce.contains(e):
            raise RuntimeError(f"element {c} of the coarse level does not contain fine element {i}")
        shift = e.level - ce.level
        if shift > 1:
            raise RuntimeError("interpolation supports one level of refinement per step")
        key = tuple(co & 1 for co in e.coords) if shift else None
        if key not in cache:
            if key is None:
                cache[key] = np.eye(k)
            else:
                cache[key] = kron_all([emb.child_interp[b] for b in key])
        blocks[i] = cache[key]
    return from_blocks(np.arange(len(fine)), parents, blocks, (len(fine), len(coarse)))


def build_p_interpolation(level: MeshLevel, p_fine: int, p_coarse: int) -> sp.bsr_matrix:
    """Block-diagonal degree embedding p_coarse -> p_fine on one mesh."""
    if p_coarse >= p_fine:
        raise ValueError(f"p-coarsening needs p_coarse < p_fine, got {p_coarse} >= {p_fine}")
    block = kron_all([p_embed(p_coarse, p_fine)] * level.dim)
    n = len(level)
    return from_blocks(np.arange(n), np.arange(n), np.broadcast_to(block, (n,) + block.shape), (n, n))


def coarse_mass(I: sp.bsr_matrix, M_f: BlockDiagonal, tol: float = 1e-12) -> BlockDiagonal:
    """M_c = I^T M_f I, checked to be block diagonal on the coarse partition."""
    prod = matmul(transpose(I), M_f.left_multiply(I))
    return BlockDiagonal.from_bsr(prod, tol=tol)


def build_restriction(I: sp.bsr_matrix, M_f: BlockDiagonal, M_c: BlockDiagonal | None = None) -> sp.bsr_matrix:
    """R = M_c^-1 I^T M_f."""
    if I.shape[0] != M_f.shape[0]:
        raise BlockDimensionError("interpolation rows do not match the fine mass")
    M_c = M_c or coarse_mass(I, M_f)
    if I.shape[1] != M_c.shape[0]:
        raise BlockDimensionError("interpolation columns do not match the coarse mass")
    return M_c.left_multiply(transpose(M_f.left_multiply(I)), inverse=True)


def rat(A_f: sp.bsr_matrix, I: sp.bsr_matrix, R: sp.bsr_matrix) -> sp.bsr_matrix:
    """Galerkin coarsening C(A_f) = R A_f I."""
    return matmul(matmul(R, A_f), I)


def galerkin_weighted(X: sp.bsr_matrix, I: sp.bsr_matrix, IT: sp.bsr_matrix | None = None) -> sp.bsr_matrix:
    """I^T X I for a mass-weighted operator X."""
    IT = transpose(I) if IT is None else IT
    return matmul(matmul(IT, X), I)
