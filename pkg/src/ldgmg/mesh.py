"""Quadtree/octree Cartesian meshes on [0, 1]^d and their coarsening hierarchy.

Elements are tree leaves addressed by ``(level, integer coords)``; an element
at tree level ``l`` has size ``2**-l``. Faces between leaves of different
size are stored at the granularity of the smaller leaf, so a coarse element
next to refined neighbours owns several sub-faces on that side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Union

import numpy as np

INTERIOR = "interior"
DIRICHLET = "dirichlet"
NEUMANN = "neumann"
PERIODIC = "periodic"

# ``bc`` is either one kind for the whole boundary or a map
# (axis, side) -> kind with side 0 = low, 1 = high.
BoundarySpec = Union[str, Mapping[tuple[int, int], str]]


def _bc_kind(bc: BoundarySpec, axis: int, side: int) -> str:
    if isinstance(bc, str):
        return bc
    return bc.get((axis, side), NEUMANN)


def validate_bc(bc: BoundarySpec, dim: int) -> None:
    kinds = {bc} if isinstance(bc, str) else set(bc.values())
    bad = kinds - {DIRICHLET, NEUMANN, PERIODIC}
    if bad:
        raise ValueError(f"unknown boundary kind(s) {sorted(bad)}")
    if not isinstance(bc, str) and PERIODIC in kinds:
        raise ValueError("periodic boundaries must apply to the whole domain")
    if not isinstance(bc, str):
        for axis, side in bc:
            if not (0 <= axis < dim and side in (0, 1)):
                raise ValueError(f"bad boundary side {(axis, side)} for dim={dim}")


def morton_key(coords: Iterable[int], nbits: int) -> int:
    """Interleave bits of ``coords`` (dimension 0 most significant)."""
    coords = list(coords)
    d = len(coords)
    key = 0
    for b in range(nbits - 1, -1, -1):
        for c in coords:
            key = (key << 1) | ((c >> b) & 1)
    return key


@dataclass(frozen=True)
class Element:
    level: int
    coords: tuple[int, ...]

    @property
    def h(self) -> float:
        return 2.0 ** -self.level

    @property
    def corner(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float) * self.h

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.coords, dtype=float) + 0.5) * self.h

    def parent(self) -> "Element":
        return Element(self.level - 1, tuple(c >> 1 for c in self.coords))

    def children(self) -> list["Element"]:
        d = len(self.coords)
        out = []
        for bits in range(2**d):
            # dimension 0 is the most significant bit, matching Morton order
            offs = [(bits >> (d - 1 - k)) & 1 for k in range(d)]
            out.append(Element(self.level + 1, tuple(2 * c + o for c, o in zip(self.coords, offs))))
        return out

    def path(self) -> str:
        """Tree path from the root: one child digit per level."""
        d = len(self.coords)
        digits = []
        for b in range(self.level - 1, -1, -1):
            digit = 0
            for c in self.coords:
                digit = (digit << 1) | ((c >> b) & 1)
            digits.append(str(digit))
        return "r" + "".join(digits)

    def contains(self, other: "Element") -> bool:
        if other.level < self.level:
            return False
        s = other.level - self.level
        return all((o >> s) == c for o, c in zip(other.coords, self.coords))


@dataclass(frozen=True)
class Face:
    """One face patch.

    ``minus`` lies on the low side of the patch along ``axis`` and ``plus``
    on the high side (for periodic wrap faces, minus is the last element and
    plus the first). Boundary faces have ``plus = -1``; their ``normal`` is
    the outward sign along ``axis``. ``lo``/``size`` describe the patch as
    an axis-aligned square (lo[axis] is the face coordinate).
    """

    kind: str
    axis: int
    minus: int
    plus: int
    normal: int
    lo: tuple[float, ...]
    size: float

    @property
    def area(self) -> float:
        return self.size ** (len(self.lo) - 1)


@dataclass
class MeshLevel:
    dim: int
    elements: list[Element]
    bc: BoundarySpec = NEUMANN
    index: int = 0  # 0 = coarsest

    def __post_init__(self):
        self._lookup = {(e.level, e.coords): i for i, e in enumerate(self.elements)}

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    def find(self, level: int, coords: tuple[int, ...]) -> int:
        return self._lookup.get((level, coords), -1)

    @cached_property
    def corners(self) -> np.ndarray:
        return np.array([e.corner for e in self.elements])

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([e.h for e in self.elements])

    @property
    def h_min(self) -> float:
        return float(self.sizes.min())

    @property
    def h_max(self) -> float:
        return float(self.sizes.max())

    @property
    def is_uniform(self) -> bool:
        return self.h_min == self.h_max

    @cached_property
    def faces(self) -> list[Face]:
        return faces_of(self)

    def ancestor_leaf(self, level: int, coords: tuple[int, ...]) -> int:
        """Index of the leaf equal to or containing cell (level, coords), or -1."""
        while level >= 0:
            idx = self.find(level, coords)
            if idx >= 0:
                return idx
            level -= 1
            coords = tuple(c >> 1 for c in coords)
        return -1

    def dump(self) -> str:
        """Plain-text listing: path, corner coords and size, one element per line."""
        lines = []
        for i, e in enumerate(self.elements):
            corner = " ".join(f"{c:.17g}" for c in e.corner)
            lines.append(f"{i} {e.path()} {corner} {e.h:.17g}")
        return "\n".join(lines) + "\n"


def faces_of(level: MeshLevel, bc: BoundarySpec | None = None) -> list[Face]:
    """Enumerate face patches with minus/plus wiring.

    Each leaf looks across its high side for same-size or larger neighbours
    and across its low side for larger neighbours; sides facing smaller
    leaves are emitted by those leaves, so every patch appears exactly once.
    """
    bc = level.bc if bc is None else bc
    validate_bc(bc, level.dim)
    periodic = bc == PERIODIC
    if periodic and not level.is_uniform:
        raise ValueError("periodic boundaries are only supported on uniform meshes")
    faces: list[Face] = []
    d = level.dim
    for idx, e in enumerate(level.elements):
        n = 2**e.level
        h = e.h
        corner = e.corner
        for axis in range(d):
            for side in (1, 0):
                step = 1 if side else -1
                nc = list(e.coords)
                nc[axis] += step
                lo = corner.copy()
                if side:
                    lo[axis] += h
                out_of_domain = not 0 <= nc[axis] < n
                if out_of_domain and not periodic:
                    kind = _bc_kind(bc, axis, side)
                    if kind == PERIODIC:
                        raise ValueError("periodic boundaries must apply to the whole domain")
                    faces.append(Face(kind, axis, idx, -1, step, tuple(lo), h))
                    continue
                if out_of_domain:
                    nc[axis] %= n
                nc = tuple(nc)
                same = level.find(e.level, nc)
                if same >= 0:
                    if side:
                        faces.append(Face(INTERIOR, axis, idx, same, 1, tuple(lo), h))
                    continue
                coarse = level.ancestor_leaf(e.level - 1, tuple(c >> 1 for c in nc)) if e.level else -1
                if coarse < 0:
                    continue  # neighbour is refined; its leaves own these patches
                if side:
                    faces.append(Face(INTERIOR, axis, idx, coarse, 1, tuple(lo), h))
                else:
                    faces.append(Face(INTERIOR, axis, coarse, idx, 1, tuple(lo), h))
    return faces


@dataclass
class MeshHierarchy:
    """Mesh levels ordered finest first; ``parents[k][i]`` is the index on
    level k+1 of the element containing element i of level k."""

    levels: list[MeshLevel]
    parents: list[np.ndarray] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.levels[0].dim

    @property
    def finest(self) -> MeshLevel:
        return self.levels[0]

    def __len__(self) -> int:
        return len(self.levels)


def _sort_morton(elements: list[Element], max_level: int) -> list[Element]:
    def key(e: Element):
        s = max_level - e.level
        return morton_key([c << s for c in e.coords], max_level)

    return sorted(elements, key=key)


def _coarsen_once(elements: list[Element], dim: int) -> list[Element]:
    """Merge every complete sibling group of leaves into its parent."""
    counts: dict[Element, int] = {}
    for e in elements:
        if e.level > 0:
            par = e.parent()
            counts[par] = counts.get(par, 0) + 1
    merged = {par for par, cnt in counts.items() if cnt == 2**dim}
    out = {e.parent() if e.level > 0 and e.parent() in merged else e for e in elements}
    return list(out)


def hierarchy_from_leaves(dim: int, leaves: list[Element], bc: BoundarySpec = NEUMANN) -> MeshHierarchy:
    """Build the full coarsening hierarchy down to the root cell."""
    max_level = max(e.level for e in leaves)
    elems = _sort_morton(leaves, max_level)
    chain = [elems]
    while len(chain[-1]) > 1:
        chain.append(_sort_morton(_coarsen_once(chain[-1], dim), max_level))
    nlev = len(chain)
    levels = [MeshLevel(dim, els, bc, index=nlev - 1 - k) for k, els in enumerate(chain)]
    parents = []
    for k in range(nlev - 1):
        fine, coarse = levels[k], levels[k + 1]
        par = np.empty(len(fine), dtype=np.int64)
        for i, e in enumerate(fine.elements):
            j = coarse.find(e.level, e.coords)
            if j < 0:
                j = coarse.find(e.level - 1, e.parent().coords)
            if j < 0:
                raise RuntimeError(f"element {e} has no parent on the next level")
            par[i] = j
        parents.append(par)
    return MeshHierarchy(levels, parents)


def build_uniform(dim: int, n: int, bc: BoundarySpec = NEUMANN) -> MeshHierarchy:
    """Uniform n^dim grid on [0, 1]^dim and its factor-two hierarchy."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if n < 2 or n & (n - 1):
        raise ValueError(f"n must be a power of two >= 2, got {n}")
    k = n.bit_length() - 1
    leaves = [Element(k, tuple(int(c) for c in idx)) for idx in np.ndindex(*(n,) * dim)]
    return hierarchy_from_leaves(dim, leaves, bc)


RefinePredicate = Callable[[Element], bool]


def _balance(dim: int, leaves: set[Element]) -> set[Element]:
    """Refine leaves until face-adjacent leaves differ by at most one level."""
    leaves = set(leaves)
    changed = True
    while changed:
        changed = False
        lookup = {(e.level, e.coords) for e in leaves}
        to_split = set()
        for e in leaves:
            if e.level < 2:
                continue
            n = 2**e.level
            for axis in range(dim):
                for step in (-1, 1):
                    nc = list(e.coords)
                    nc[axis] += step
                    if not 0 <= nc[axis] < n:
                        continue
                    # a leaf two or more levels coarser across this face?
                    lvl, cc = e.level - 2, tuple(c >> 2 for c in nc)
                    while lvl >= 0:
                        if (lvl, cc) in lookup:
                            to_split.add(Element(lvl, cc))
                            break
                        lvl -= 1
                        cc = tuple(c >> 1 for c in cc)
        if to_split:
            changed = True
            for e in to_split:
                leaves.discard(e)
                leaves.update(e.children())
    return leaves


def build_adaptive(
    dim: int,
    refine: RefinePredicate,
    max_level: int,
    bc: BoundarySpec = NEUMANN,
    balance: bool = True,
) -> MeshHierarchy:
    """Refine the root cell wherever ``refine(element)`` holds, up to
    ``max_level``, then enforce 2:1 face balance."""
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if max_level < 0:
        raise ValueError("max_level must be nonnegative")
    root = Element(0, (0,) * dim)
    leaves: set[Element] = set()
    stack = [root]
    while stack:
        e = stack.pop()
        if e.level < max_level and refine(e):
            stack.extend(e.children())
        else:
            leaves.add(e)
    if balance:
        leaves = _balance(dim, leaves)
    return hierarchy_from_leaves(dim, list(leaves), bc)


def corner_refiner(base_level: int = 2, origin=None, rate: float = 0.5) -> RefinePredicate:
    """Uniform to ``base_level``, then refine cells closer to ``origin`` than
    ``0.5 * 2**(-rate * (level - base_level))``.

    With ``rate < 1`` the refined region shrinks more slowly than the cells,
    so every level adds a growing band of fine elements around the corner.
    """
    o = None if origin is None else np.asarray(origin, float)

    def refine(e: Element) -> bool:
        if e.level < base_level:
            return True
        org = np.zeros(len(e.coords)) if o is None else o
        lo = e.corner
        nearest = np.clip(org, lo, lo + e.h)
        return float(np.linalg.norm(nearest - org)) < 0.5 * 2.0 ** (-rate * (e.level - base_level))

    return refine


def annulus_refiner(base_level: int = 3, radius: float = 0.35, center=None) -> RefinePredicate:
    """Uniform to ``base_level``, then refine cells cut by a sphere of the
    given radius (graded band of width ~ one cell)."""
    def refine(e: Element) -> bool:
        if e.level < base_level:
            return True
        c = np.full(len(e.coords), 0.5) if center is None else np.asarray(center, float)
        lo = e.corner
        nearest = np.clip(c, lo, lo + e.h)
        dmin = float(np.linalg.norm(nearest - c))
        far = np.where(np.abs(lo - c) > np.abs(lo + e.h - c), lo, lo + e.h)
        dmax = float(np.linalg.norm(far - c))
        return dmin - e.h <= radius <= dmax + e.h

    return refine


ADAPTIVE_PRESETS: dict[str, Callable[..., RefinePredicate]] = {
    "corner": corner_refiner,
    "annulus": annulus_refiner,
}
