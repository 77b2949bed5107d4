import numpy as np
import pytest
import scipy.linalg

import _oracle
from _helpers import e1_matrix, e2_matrix, extension, gen_eig_range, global_from_local
from ieti_dg.assembly import (AssemblyError, assemble_local, assemble_parameter_matrices,
                              build_edge_projection, choose_penalty, discretize,
                              volume_matrices)
from ieti_dg.geometry import (MultiPatch, interpolate_map, quarter_annulus_multipatch,
                              unit_square_multipatch)
from ieti_dg.splines import collocation, gauss_rule


def test_choose_penalty():
    assert choose_penalty(2) == 18.0
    assert choose_penalty(1, 4) == 4.0
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            choose_penalty(2, bad)


def test_single_patch_reduces_to_kronecker():
    for p, r in [(1, 0), (1, 1), (2, 2)]:
        disc = discretize(unit_square_multipatch(1, 1), p, r)
        ls = assemble_local(disc, 0)
        (M1, K1), (M2, K2) = disc.bases[0].reduced_matrices()
        ref = np.kron(K1, M2) + np.kron(M1, K2)
        np.testing.assert_allclose(ls.A.toarray(), ref, atol=1e-13)


def test_zero_jump_has_no_penalty():
    disc = discretize(unit_square_multipatch(2, 1), 1, 1)
    rng = np.random.default_rng(5)
    # continuous function: equal coefficients at matching interface dofs
    u = [rng.standard_normal(b.n_dofs) for b in disc.bases]
    d0, _ = disc.bases[0].side_functions("east")
    d1, _ = disc.bases[1].side_functions("west")
    u[1][d1] = u[0][d0]
    for k in range(2):
        ls = assemble_local(disc, k)
        K, _, _ = volume_matrices(disc.mp.maps[k], disc.bases[k])
        ue = extension(disc, k) @ np.concatenate(u)
        pen = ls.D.toarray()
        pen[: K.shape[0], : K.shape[0]] -= K.toarray()
        assert abs(ue @ pen @ ue) <= 1e-12 * abs(ue @ ls.D @ ue)


@pytest.mark.parametrize("layout", ["square", "annulus_mixed", "annulus"])
def test_bilinear_form_matches_oracle(layout, f):
    if layout == "square":
        disc = discretize(unit_square_multipatch(2, 1), 2, 1)
    elif layout == "annulus":
        disc = discretize(quarter_annulus_multipatch(2, 2), 2, 2)
    else:
        disc = discretize(quarter_annulus_multipatch(2, 2), [2, 3, 3, 2], [2, 1, 1, 3])
    A, D, F = global_from_local(disc, f)
    Ao, Do, Fo = _oracle.global_system(disc, f)
    rng = np.random.default_rng(7)
    for _ in range(5):
        v = rng.standard_normal(A.shape[0])
        assert v @ A @ v == pytest.approx(v @ Ao @ v, rel=1e-12)
        assert v @ D @ v == pytest.approx(v @ Do @ v, rel=1e-12)
    np.testing.assert_allclose(F, Fo, rtol=0, atol=1e-12 * np.abs(Fo).max())


def test_local_symmetry(annulus22_mixed):
    for k in range(annulus22_mixed.K):
        ls = assemble_local(annulus22_mixed, k)
        A = ls.A.toarray()
        assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()


@pytest.mark.parametrize("layout", ["square:2x2", "annulus:4x2", "annulus:2x2"])
def test_coercivity_with_default_penalty(layout):
    from ieti_dg.geometry import parse_layout
    for r in (1, 2):
        disc = discretize(parse_layout(layout), 2, r)
        A, _, _ = global_from_local(disc)
        assert np.linalg.eigvalsh(A).min() > 0


def _floating_pair(right):
    """Two patches sharing the edge x = 1 with an explicit topology, no Dirichlet sides."""
    from ieti_dg.geometry import Interface, PatchTopology
    a = interpolate_map(lambda x, y: (x, y))
    topo = PatchTopology(2, [Interface(0, 1, "east", "west", True)], [], [(), ()])
    return MultiPatch([a, right], topo)


def test_nonmatching_geometry_rejected():
    # same end points but a bulging interior curve along the shared edge
    bulge = interpolate_map(lambda x, y: (1 + x + 0.2 * y * (1 - y) * (1 - x), y))
    with pytest.raises(AssemblyError):
        discretize(_floating_pair(bulge), 2, 1)


def _delta_blocks(disc, k):
    from ieti_dg.ieti import classify_dofs
    ls = assemble_local(disc, k)
    d = classify_dofs(disc, k).delta
    return ls.A.toarray()[np.ix_(d, d)], ls.D.toarray()[np.ix_(d, d)]


def test_patchwise_equivalence():
    ratios = []
    for r in (1, 2):
        disc = discretize(quarter_annulus_multipatch(3, 3), 2, r)
        rr = []
        for k in range(disc.K):
            lo, hi = gen_eig_range(*_delta_blocks(disc, k))
            assert lo > 0
            rr.append(hi / lo)
        ratios.append(max(rr))
    assert max(ratios) <= 50
    assert ratios[1] <= 1.1 * ratios[0]


def test_parameter_matrices_alpha_and_kronecker():
    disc = discretize(unit_square_multipatch(3, 3), 2, 1)
    ident = interpolate_map(lambda a, b: (a, b))
    for k in range(disc.K):
        pm = assemble_parameter_matrices(disc, k)
        floating = not disc.bases[k].dirichlet
        assert pm.alpha == (1.0 if floating else 0.0)
        D1 = pm.dtilde1()
        # direct 2-D assembly on the parameter domain with its own quadrature
        K2, M2, _ = volume_matrices(ident, disc.bases[k], nq=5)
        ref = K2.toarray() + pm.alpha * M2.toarray()
        assert np.abs(D1 - ref).max() <= 1e-13 * np.abs(ref).max()
        assert np.linalg.eigvalsh(D1).min() > 0
        if floating:
            (M1, K1), (Mb, Kb) = pm.factors
            S = np.kron(K1, Mb) + np.kron(M1, Kb)
            assert np.linalg.eigvalsh(S).min() < 1e-12


def test_dtilde2_equals_dhat2(annulus22_mixed):
    for k in range(annulus22_mixed.K):
        space = annulus22_mixed.spaces[k]
        pm = assemble_parameter_matrices(annulus22_mixed, k)
        E2 = e2_matrix(space)
        D2hat = E2.T @ pm.Dhat.toarray() @ E2
        np.testing.assert_allclose(D2hat, scipy.linalg.block_diag(*pm.edge_mass),
                                   atol=1e-13 * np.abs(D2hat).max())


def test_orthogonal_splitting(annulus22_mixed, rng):
    for k in range(annulus22_mixed.K):
        space = annulus22_mixed.spaces[k]
        pm = assemble_parameter_matrices(annulus22_mixed, k)
        Dh = pm.Dhat.toarray()
        E1, E2 = e1_matrix(pm, space), e2_matrix(space)
        U1 = E1 @ rng.standard_normal((space.n_patch, 100))
        U2 = E2 @ rng.standard_normal((E2.shape[1], 100))
        cross = np.abs(np.einsum("ij,ij->j", U1, Dh @ U2))
        n1 = np.sqrt(np.einsum("ij,ij->j", U1, Dh @ U1))
        n2 = np.sqrt(np.einsum("ij,ij->j", U2, Dh @ U2))
        assert (cross / (n1 * n2)).max() <= 1e-11


def test_d_equivalence():
    ratios = []
    for r in (1, 2):
        disc = discretize(unit_square_multipatch(3, 3), 2, r)
        rr = []
        for k in range(disc.K):
            space = disc.spaces[k]
            pm = assemble_parameter_matrices(disc, k)
            E1 = e1_matrix(pm, space)
            lhs = E1.T @ pm.Dhat.toarray() @ E1 + pm.mass()
            lo, hi = gen_eig_range(lhs, pm.dtilde1())
            rr.append(hi / lo)
        ratios.append(max(rr))
    assert max(ratios) <= 100


def test_edge_projection_matching_is_permutation(square22_r1):
    proj = build_edge_projection(square22_r1, 0, 1)
    P = proj.matrix()[:, proj.side_dofs]
    np.testing.assert_allclose(P, np.eye(P.shape[0]), atol=1e-12)


def test_edge_projection_reversed_orientation():
    a = interpolate_map(lambda x, y: (x, y))
    b = interpolate_map(lambda x, y: (2 - x, 1 - y))
    disc = discretize(MultiPatch([a, b]), 2, 1)
    proj = build_edge_projection(disc, 0, 1)
    P = proj.matrix()[:, proj.side_dofs]
    np.testing.assert_allclose(P, np.eye(P.shape[0])[::-1], atol=1e-12)


def test_edge_projection_of_constant():
    right = interpolate_map(lambda x, y: (1 + x, y))
    disc = discretize(_floating_pair(right), [2, 3], [1, 2])
    for k, l in ((0, 1), (1, 0)):
        proj = build_edge_projection(disc, k, l)
        u = np.zeros(proj.n_patch)
        u[proj.side_dofs] = 1.0
        np.testing.assert_allclose(proj.apply(u), 1.0, atol=1e-12)


def _strip():
    # patch 0 coarse (r=1), patch 1 fine (r=2), same degree: coarse trace is a subspace
    return discretize(unit_square_multipatch(2, 1), [2, 2], [1, 2])


def test_coarse_to_fine_projection_is_exact(rng):
    disc = _strip()
    proj = build_edge_projection(disc, 0, 1)
    blk = disc.spaces[0].block(1)
    u = rng.standard_normal(proj.n_patch)
    s = np.linspace(0.01, 0.99, 41)
    kv0 = disc.bases[0].kv[1]
    kv1 = disc.bases[1].kv[1]
    side_tr = collocation(kv0, s)[0].toarray()[:, disc.bases[0].side_functions("east")[1]]
    fine_tr = collocation(kv1, s)[0].toarray()[:, blk.tangential]
    np.testing.assert_allclose(fine_tr @ proj.apply(u), side_tr @ u[proj.side_dofs],
                               atol=1e-12)


def test_projection_idempotent(rng):
    disc = _strip()
    proj = build_edge_projection(disc, 1, 0)          # fine patch -> coarse trace
    blk = disc.spaces[1].block(0)
    kv_f, kv_c = disc.bases[1].kv[1], disc.bases[0].kv[1]
    u = rng.standard_normal(proj.n_patch)
    y = proj.apply(u)
    # re-express the coarse result in the fine trace basis (a superspace)
    g = kv_f.greville()
    coarse_vals = collocation(kv_c, g)[0].toarray()[:, blk.tangential] @ y
    tang_f = disc.bases[1].side_functions("west")[1]
    Cf = collocation(kv_f, g)[0].toarray()
    cf = np.linalg.solve(Cf, coarse_vals)
    w = np.zeros(proj.n_patch)
    w[proj.side_dofs] = cf[tang_f]
    np.testing.assert_allclose(proj.apply(w), y, atol=1e-12)


def test_fine_to_coarse_projection_least_squares():
    disc = _strip()
    proj = build_edge_projection(disc, 1, 0)        # fine patch -> coarse trace
    kv_f = disc.bases[1].kv[1]
    kv_c = disc.bases[0].kv[1]
    # fine-space interpolant of sin(pi s) via dense collocation at Greville points
    tang_f = disc.bases[1].side_functions("west")[1]
    g = kv_f.greville()
    Cf = collocation(kv_f, g)[0].toarray()
    cf = np.linalg.solve(Cf, np.sin(np.pi * g))
    u = np.zeros(proj.n_patch)
    u[proj.side_dofs] = cf[tang_f]
    y = proj.apply(u)
    # oracle: weighted least squares on an independent fine Gauss rule
    x, w = gauss_rule(np.linspace(0, 1, 33), 6)
    blk = disc.spaces[1].block(0)
    Tc = collocation(kv_c, x)[0].toarray()[:, blk.tangential]
    Sf = collocation(kv_f, x)[0].toarray() @ cf
    sw = np.sqrt(w)
    ref, *_ = np.linalg.lstsq(Tc * sw[:, None], Sf * sw, rcond=None)
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_projection_galerkin_orthogonality(annulus22_mixed, rng):
    disc = annulus22_mixed
    x, w = gauss_rule(np.linspace(0, 1, 17), 8)
    for itf in disc.mp.topology.interfaces:
        k, l = itf.k, itf.l
        proj = build_edge_projection(disc, k, l)
        blk = disc.spaces[k].block(l)
        side = blk.side
        nd = 0 if side in ("west", "east") else 1
        kv_k = disc.bases[k].kv[1 - nd]
        kv_l = disc.bases[l].kv[1 - SIDE_DIR[blk.neighbor_side]]
        tang_k = disc.bases[k].side_functions(side)[1]
        t = x if blk.same_orientation else 1.0 - x
        Sk = collocation(kv_k, x)[0].toarray()[:, tang_k]
        Tl = collocation(kv_l, t)[0].toarray()[:, blk.tangential]
        u = rng.standard_normal(proj.n_patch)
        diff = Tl @ proj.apply(u) - Sk @ u[proj.side_dofs]
        V = Tl @ rng.standard_normal((Tl.shape[1], 20))
        scale = np.sqrt(w @ (Sk @ u[proj.side_dofs]) ** 2)
        assert np.abs((w * diff) @ V).max() <= 1e-11 * scale * np.sqrt(
            (w[:, None] * V ** 2).sum(0)).max()


SIDE_DIR = {"west": 0, "east": 0, "south": 1, "north": 1}


def test_discretize_trace_blocks(annulus22_mixed):
    disc = annulus22_mixed
    for k, space in enumerate(disc.spaces):
        nb = [blk.neighbor for blk in space.blocks]
        assert nb == sorted(disc.mp.topology.neighbors(k))
        assert space.n_total == space.n_patch + sum(
            len(disc.bases[b.neighbor].side_functions(b.neighbor_side)[0]) for b in space.blocks)
    cfg = disc.config
    for itf in disc.mp.topology.interfaces:
        assert cfg.h_kl(itf.k, itf.l) == min(cfg.h[itf.k], cfg.h[itf.l])
    assert cfg.delta == choose_penalty(3)
