"""Block-sparse matrices over an element graph.

Block-sparse operators are stored as :class:`scipy.sparse.bsr_matrix` with
one dense block per (element, element) pair; rows and columns may use
different block sizes (transfers between polynomial degrees). The helpers
here add the dimension checks, canonical ordering and block-diagonal
handling the assembly and multigrid code rely on.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg  # noqa: F401  (sp.linalg.norm)

BlockSparseMatrix = sp.bsr_matrix

# blocks processed per batch in block-diagonal products (bounds temporaries)
_CHUNK = 2048


class BlockDimensionError(ValueError):
    pass


class AssemblyError(RuntimeError):
    """An operator violates a structural property it must have by construction."""


def from_blocks(rows, cols, blocks, shape_blocks: tuple[int, int]) -> sp.bsr_matrix:
    """Assemble a BSR matrix from (row, col, block) triplets, summing duplicates.

    The result has sorted column indices within each block row; summation
    order is fixed by a stable sort so results are bit-reproducible.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    blocks = np.asarray(blocks, dtype=float)
    nbr, nbc = shape_blocks
    if blocks.ndim != 3 or len(blocks) != len(rows) or len(rows) != len(cols):
        raise BlockDimensionError("rows, cols and blocks must have matching lengths")
    R, C = blocks.shape[1:]
    if len(rows) == 0:
        return sp.bsr_matrix((nbr * R, nbc * C), blocksize=(R, C))
    key = rows * nbc + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    data = np.add.reduceat(blocks[order], starts, axis=0)
    ukey = key[starts]
    urow = ukey // nbc
    indices = (ukey % nbc).astype(np.int32)
    indptr = np.zeros(nbr + 1, dtype=np.int32)
    np.cumsum(np.bincount(urow, minlength=nbr), out=indptr[1:])
    return sp.bsr_matrix((data, indices, indptr), shape=(nbr * R, nbc * C))


def block_rows(A: sp.bsr_matrix) -> np.ndarray:
    """Block-row index of every stored block."""
    return np.repeat(np.arange(len(A.indptr) - 1), np.diff(A.indptr))


def _check_bsr(A) -> sp.bsr_matrix:
    if not sp.issparse(A) or A.format != "bsr":
        raise TypeError(f"expected a BSR matrix, got {type(A).__name__}")
    return A


def spmv(A: sp.bsr_matrix, x: np.ndarray) -> np.ndarray:
    _check_bsr(A)
    x = np.asarray(x)
    if x.shape[0] != A.shape[1]:
        raise BlockDimensionError(f"matrix has {A.shape[1]} columns, vector has {x.shape[0]} entries")
    return A @ x


def transpose(A: sp.bsr_matrix) -> sp.bsr_matrix:
    out = _check_bsr(A).transpose().tobsr()
    out.sort_indices()
    return out


def matmul(A: sp.bsr_matrix, B: sp.bsr_matrix) -> sp.bsr_matrix:
    _check_bsr(A)
    _check_bsr(B)
    if A.shape[1] != B.shape[0] or A.blocksize[1] != B.blocksize[0]:
        raise BlockDimensionError(
            f"cannot multiply {A.shape} (blocks {A.blocksize}) by {B.shape} (blocks {B.blocksize})"
        )
    out = (A @ B).tobsr(blocksize=(A.blocksize[0], B.blocksize[1]))
    out.sort_indices()
    return out


def add_scaled(A: sp.bsr_matrix, B: sp.bsr_matrix, alpha: float = 1.0) -> sp.bsr_matrix:
    _check_bsr(A)
    _check_bsr(B)
    if A.shape != B.shape or A.blocksize != B.blocksize:
        raise BlockDimensionError(f"cannot add {A.shape}/{A.blocksize} and {B.shape}/{B.blocksize}")
    out = (A + alpha * B).tobsr(blocksize=A.blocksize)
    out.sort_indices()
    return out


def add_into(A: sp.bsr_matrix, B: sp.bsr_matrix, alpha: float = 1.0) -> sp.bsr_matrix:
    """A + alpha B, written into A's storage when B's block pattern is a
    subset of A's (otherwise a new matrix is returned)."""
    _check_bsr(A)
    _check_bsr(B)
    if A.shape != B.shape or A.blocksize != B.blocksize:
        raise BlockDimensionError(f"cannot add {A.shape}/{A.blocksize} and {B.shape}/{B.blocksize}")
    A.sort_indices()
    B.sum_duplicates()
    nbc = A.shape[1] // A.blocksize[1]
    ka = block_rows(A).astype(np.int64) * nbc + A.indices
    kb = block_rows(B).astype(np.int64) * nbc + B.indices
    pos = np.searchsorted(ka, kb)
    inside = pos < len(ka)
    if inside.all() and np.array_equal(ka[pos], kb):
        A.data[pos] += alpha * B.data
        return A
    return add_scaled(A, B, alpha)


def rel_frobenius(A, B) -> float:
    """||A - B||_F / max(||B||_F, tiny) for sparse or dense operands."""
    diff = A - B
    nd = sp.linalg.norm(diff) if sp.issparse(diff) else np.linalg.norm(diff)
    nb = sp.linalg.norm(B) if sp.issparse(B) else np.linalg.norm(B)
    return float(nd / max(nb, 1e-300))


class BlockDiagonal:
    """One dense square block per element, e.g. the mass matrix."""

    def __init__(self, blocks: np.ndarray):
        blocks = np.ascontiguousarray(blocks, dtype=float)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
            raise BlockDimensionError("block-diagonal blocks must have shape (n, k, k)")
        self.blocks = blocks
        self._inv = None

    @property
    def nblocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def block_size(self) -> int:
        return self.blocks.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        n = self.nblocks * self.block_size
        return (n, n)

    @property
    def inv_blocks(self) -> np.ndarray:
        if self._inv is None:
            self._inv = np.linalg.inv(self.blocks)
        return self._inv

    def inverse(self) -> "BlockDiagonal":
        out = BlockDiagonal(self.inv_blocks)
        out._inv = self.blocks
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        k = self.block_size
        return np.einsum("eij,ej->ei", self.blocks, x.reshape(-1, k)).ravel()

    def solve(self, x: np.ndarray) -> np.ndarray:
        k = self.block_size
        return np.einsum("eij,ej->ei", self.inv_blocks, x.reshape(-1, k)).ravel()

    def to_bsr(self) -> sp.bsr_matrix:
        n, k = self.nblocks, self.block_size
        return sp.bsr_matrix(
            (self.blocks.copy(), np.arange(n, dtype=np.int32), np.arange(n + 1, dtype=np.int32)),
            shape=(n * k, n * k),
        )

    def left_multiply(self, A: sp.bsr_matrix, inverse: bool = False, inplace: bool = False) -> sp.bsr_matrix:
        """Return diag(B) @ A (or diag(B)^-1 @ A) as BSR with A's pattern.

        With ``inplace`` the blocks of A are overwritten and A is returned.
        """
        _check_bsr(A)
        if A.blocksize[0] != self.block_size or len(A.indptr) - 1 != self.nblocks:
            raise BlockDimensionError("block-diagonal factor does not conform to the matrix rows")
        B = self.inv_blocks if inverse else self.blocks
        rows = block_rows(A)
        data = A.data if inplace else np.empty_like(A.data)
        for s in range(0, len(rows), _CHUNK):
            data[s:s + _CHUNK] = np.matmul(B[rows[s:s + _CHUNK]], A.data[s:s + _CHUNK])
        if inplace:
            return A
        return sp.bsr_matrix((data, A.indices.copy(), A.indptr.copy()), shape=A.shape)

    def right_multiply(self, A: sp.bsr_matrix, inverse: bool = False, inplace: bool = False) -> sp.bsr_matrix:
        """Return A @ diag(B) (or A @ diag(B)^-1)."""
        _check_bsr(A)
        if A.blocksize[1] != self.block_size or A.shape[1] != self.shape[0]:
            raise BlockDimensionError("block-diagonal factor does not conform to the matrix columns")
        B = self.inv_blocks if inverse else self.blocks
        data = A.data if inplace else np.empty_like(A.data)
        for s in range(0, len(A.indices), _CHUNK):
            data[s:s + _CHUNK] = np.matmul(A.data[s:s + _CHUNK], B[A.indices[s:s + _CHUNK]])
        if inplace:
            return A
        return sp.bsr_matrix((data, A.indices.copy(), A.indptr.copy()), shape=A.shape)

    def check_spd(self, tol: float = 1e-11) -> None:
        if not np.allclose(self.blocks, np.swapaxes(self.blocks, 1, 2), rtol=0, atol=tol * np.abs(self.blocks).max()):
            raise AssemblyError("block-diagonal matrix is not symmetric")
        np.linalg.cholesky(self.blocks)

    @classmethod
    def from_bsr(cls, A: sp.bsr_matrix, tol: float = 1e-12) -> "BlockDiagonal":
        """Extract the diagonal blocks; raise if off-diagonal blocks are nonzero."""
        _check_bsr(A)
        R, C = A.blocksize
        if R != C:
            raise BlockDimensionError("block diagonal needs square blocks")
        n = len(A.indptr) - 1
        rows = block_rows(A)
        on = rows == A.indices
        scale = max(np.abs(A.data).max(initial=0.0), 1e-300)
        off = np.abs(A.data[~on]).max(initial=0.0)
        if off > tol * scale:
            raise AssemblyError(f"matrix is not block diagonal (off-diagonal block max {off:.3e})")
        blocks = np.zeros((n, R, R))
        np.add.at(blocks, rows[on], A.data[on])
        return cls(blocks)


def diagonal_blocks(A: sp.bsr_matrix) -> np.ndarray:
    """Copy of the diagonal blocks of a square-block BSR matrix."""
    _check_bsr(A)
    R, C = A.blocksize
    n = len(A.indptr) - 1
    rows = block_rows(A)
    on = rows == A.indices
    blocks = np.zeros((n, R, C))
    np.add.at(blocks, rows[on], A.data[on])
    return blocks


class BottomSolver:
    """Dense solver for the coarsest level.

    Positive semidefinite matrices with a nullspace (pure Neumann or
    periodic problems) are handled by projection: the right-hand side is
    made orthogonal to the nullspace and the minimum-norm solution returned.
    """

    def __init__(self, A, null_tol: float = 1e-10, neg_tol: float = 1e-10):
        dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        asym = np.abs(dense - dense.T).max(initial=0.0)
        scale = max(np.abs(dense).max(initial=0.0), 1e-300)
        if asym > 1e-8 * scale:
            raise AssemblyError(f"bottom matrix is not symmetric (|A - A^T| = {asym:.3e})")
        dense = 0.5 * (dense + dense.T)
        w, V = np.linalg.eigh(dense)
        wmax = max(np.abs(w).max(initial=0.0), 1e-300)
        if w.size and w[0] < -neg_tol * wmax:
            raise AssemblyError(f"bottom matrix is indefinite (eigenvalue {w[0]:.3e}); assembly bug")
        keep = w > null_tol * wmax
        self.null = V[:, ~keep]
        self.range = V[:, keep]
        self.winv = 1.0 / w[keep]
        self.size = dense.shape[0]
        self._chol = None
        if not (~keep).any():
            self._chol = sla.cho_factor(dense)

    @property
    def singular(self) -> bool:
        return self.null.shape[1] > 0

    def project(self, b: np.ndarray) -> np.ndarray:
        if not self.singular:
            return b
        return b - self.null @ (self.null.T @ b)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._chol is not None:
            return sla.cho_solve(self._chol, b)
        return self.range @ (self.winv * (self.range.T @ b))


def bottom_solve(A, b: np.ndarray) -> np.ndarray:
    """Solve the coarsest-level system directly (see :class:`BottomSolver`)."""
    return BottomSolver(A).solve(np.asarray(b, dtype=float))


PRNG_NAME = "numpy.PCG64"


def random_vector(n: int, seed: int) -> np.ndarray:
    """Entries i.i.d. uniform on [-1, 1] from a seeded PCG64 stream."""
    n = int(getattr(n, "ndofs", n))
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, n)


def dump_coo(A: sp.bsr_matrix) -> str:
    """Coordinate text dump: ``block_row block_col v0 v1 ...`` per stored block."""
    _check_bsr(A)
    lines = [f"# blocks {len(A.indptr) - 1}x{A.shape[1] // A.blocksize[1]} blocksize {A.blocksize[0]}x{A.blocksize[1]}"]
    for r, c, blk in zip(block_rows(A), A.indices, A.data):
        vals = " ".join(f"{v:.17g}" for v in blk.ravel())
        lines.append(f"{r} {c} {vals}")
    return "\n".join(lines) + "\n"
