import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from ldgmg.blocklinalg import matmul, rel_frobenius
from ldgmg.ldg import (
    DGSpace,
    LdgConfig,
    assemble_broken_gradient,
    assemble_gradient,
    assemble_lifting,
    assemble_mass,
    assemble_penalties,
)
from ldgmg.mesh import DIRICHLET, NEUMANN, PERIODIC, build_adaptive, build_uniform, corner_refiner
from ldgmg.transfer import (
    TransferPair,
    build_h_interpolation,
    build_p_interpolation,
    build_restriction,
    coarse_mass,
    galerkin_weighted,
    rat,
)


def _pair(mh, k, p):
    fine, coarse = mh.levels[k], mh.levels[k + 1]
    I = build_h_interpolation(fine, coarse, mh.parents[k], p)
    M_f, M_c = assemble_mass(fine, p), assemble_mass(coarse, p)
    return fine, coarse, I, M_f, M_c


def _rel(C, ref, fine):
    """Relative Frobenius distance; falls back to the fine operator's norm
    when the reference vanishes (e.g. no interior faces on the coarse mesh)."""
    d = np.linalg.norm((C - ref).toarray())
    scale = np.linalg.norm(ref.toarray()) or np.linalg.norm(fine.toarray())
    return d / scale


def _sum_ops(ops):
    out = ops[0]
    for o in ops[1:]:
        out = out + o
    return out


@given(st.sampled_from([2, 3]), st.integers(1, 3))
@settings(max_examples=12, deadline=None)
def test_restriction_is_left_inverse_and_constants_preserved(dim, p):
    mh = build_uniform(dim, 4 if dim == 2 else 2)
    fine, coarse, I, M_f, M_c = _pair(mh, 0, p)
    R = build_restriction(I, M_f)
    assert_allclose((R @ I).toarray(), np.eye(I.shape[1]), atol=1e-12)
    assert_allclose(I @ np.ones(I.shape[1]), 1.0, atol=1e-14)


def test_interpolation_is_exact_injection():
    mh = build_uniform(2, 4)
    p = 2
    fine, coarse, I, _, _ = _pair(mh, 0, p)
    fn = lambda x: (0.2 + x[:, 0]) ** 2 * (1 - x[:, 1])
    uc = DGSpace(coarse, p).interpolate(fn)
    assert_allclose(I @ uc, DGSpace(fine, p).interpolate(fn), atol=1e-13)


@pytest.mark.parametrize("mesh", ["uniform", "adaptive"])
@pytest.mark.parametrize("p", [1, 2, 3])
def test_coarse_mass_identity(mesh, p):
    mh = build_uniform(2, 8) if mesh == "uniform" else build_adaptive(2, corner_refiner(), 5)
    for k in range(len(mh) - 1):
        _, coarse, I, M_f, M_c = _pair(mh, k, p)
        Mc = coarse_mass(I, M_f)
        assert np.abs(Mc.blocks - M_c.blocks).max() <= 1e-13 * np.abs(M_c.blocks).max()


@pytest.mark.parametrize("dim,n,p", [(2, 4, 1), (2, 8, 2), (2, 4, 3), (3, 4, 1), (3, 2, 2)])
@pytest.mark.parametrize("bc", [NEUMANN, DIRICHLET, PERIODIC])
def test_rat_identities_uniform(dim, n, p, bc):
    mh = build_uniform(dim, n, bc)
    fine, coarse, I, M_f, M_c = _pair(mh, 0, p)
    R = build_restriction(I, M_f, M_c)
    cfg = LdgConfig()
    for Bf, Bc in zip(assemble_broken_gradient(fine, p), assemble_broken_gradient(coarse, p)):
        assert _rel(rat(Bf, I, R), Bc, Bf) <= 1e-12
    for Lf, Lc in zip(assemble_lifting(fine, p, cfg, M_f), assemble_lifting(coarse, p, cfg, M_c)):
        assert _rel(rat(Lf, I, R), Lc, Lf) <= 1e-12
    for Gf, Gc in zip(assemble_gradient(fine, p, cfg, M_f), assemble_gradient(coarse, p, cfg, M_c)):
        assert rel_frobenius(rat(Gf, I, R), Gc) <= 1e-12
    E0f, EDf = assemble_penalties(fine, p, weighted=False)
    E0c, EDc = assemble_penalties(coarse, p, weighted=False)
    assert _rel(rat(E0f, I, R), E0c, E0f) <= 1e-12
    if bc == DIRICHLET:
        assert rel_frobenius(rat(EDf, I, R), EDc) <= 1e-12


@pytest.mark.parametrize("p", [1, 2])
def test_rat_gradient_adaptive(p):
    """Coarsening G on an adaptive mesh reproduces the coarse-mesh gradient,
    hanging faces included."""
    mh = build_adaptive(2, corner_refiner(), 5)
    for k in range(len(mh) - 1):
        fine, coarse, I, M_f, M_c = _pair(mh, k, p)
        R = build_restriction(I, M_f, M_c)
        for Gf, Gc in zip(assemble_gradient(fine, p, mass=M_f), assemble_gradient(coarse, p, mass=M_c)):
            assert rel_frobenius(rat(Gf, I, R), Gc) <= 1e-12


def test_weighted_and_coefficient_coarsening_agree():
    mh = build_uniform(2, 4, PERIODIC)
    p = 2
    fine, coarse, I, M_f, M_c = _pair(mh, 0, p)
    E0w, _ = assemble_penalties(fine, p)
    E0, _ = assemble_penalties(fine, p, weighted=False)
    R = build_restriction(I, M_f, M_c)
    lhs = galerkin_weighted(E0w, I)
    rhs = M_c.left_multiply(rat(E0, I, R))
    assert rel_frobenius(lhs, rhs) <= 1e-12


def test_product_coarsening_gap():
    """C(D G) differs from C(D) C(G): coarsening does not commute with products."""
    mh = build_uniform(2, 4, NEUMANN)
    p = 1
    fine, coarse, I, M_f, M_c = _pair(mh, 0, p)
    R = build_restriction(I, M_f, M_c)
    G = assemble_gradient(fine, p, mass=M_f)
    D = [M_f.left_multiply(M_f.right_multiply(Gk.T.tobsr()), inverse=True) * -1.0 for Gk in G]
    DG = _sum_ops([matmul(Dk, Gk) for Dk, Gk in zip(D, G)])
    lhs = rat(DG.tobsr(), I, R)
    rhs = _sum_ops([matmul(rat(Dk, I, R), rat(Gk, I, R)) for Dk, Gk in zip(D, G)])
    gap = np.linalg.norm((lhs - rhs).toarray())
    assert gap > 1e-8


@pytest.mark.parametrize("p_f,p_c", [(2, 1), (4, 2), (3, 2), (5, 3)])
def test_p_interpolation(p_f, p_c):
    lev = build_uniform(2, 2).finest
    I = build_p_interpolation(lev, p_f, p_c)
    fn = lambda x: (0.3 + x[:, 0]) ** p_c * (1 + x[:, 1])
    uc = DGSpace(lev, p_c).interpolate(lambda x: (0.3 + x[:, 0]) ** p_c * (1 + x[:, 1]))
    assert_allclose(I @ uc, DGSpace(lev, p_f).interpolate(fn), atol=1e-12)
    M_f = assemble_mass(lev, p_f)
    M_c = assemble_mass(lev, p_c)
    Mc = coarse_mass(I, M_f)
    assert np.abs(Mc.blocks - M_c.blocks).max() <= 1e-13 * np.abs(M_c.blocks).max()
    R = build_restriction(I, M_f)
    assert_allclose((R @ I).toarray(), np.eye(I.shape[1]), atol=1e-12)


def test_p_interpolation_rejects_raising():
    with pytest.raises(ValueError):
        build_p_interpolation(build_uniform(2, 2).finest, 1, 2)


def test_transfer_pair_restriction_requires_mass():
    mh = build_uniform(2, 2)
    _, _, I, M_f, _ = _pair(mh, 0, 1)
    tp = TransferPair(I, "h", (0, 1), (1, 1))
    with pytest.raises(ValueError):
        tp.R
    tp = TransferPair(I, "h", (0, 1), (1, 1), M_f=M_f)
    assert_allclose((tp.R @ I).toarray(), np.eye(I.shape[1]), atol=1e-12)
    assert_allclose(tp.IT.toarray(), I.toarray().T)


def test_adaptive_interpolation_has_identity_blocks():
    mh = build_adaptive(2, corner_refiner(), 5)
    fine, coarse, I, _, _ = _pair(mh, 0, 1)
    unchanged = sum(1 for e in fine.elements if coarse.find(e.level, e.coords) >= 0)
    assert unchanged > 0
    eye_blocks = sum(np.array_equal(b, np.eye(4)) for b in I.data)
    assert eye_blocks == unchanged
