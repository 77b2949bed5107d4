"""SIPG assembly on extended patch spaces and the parameter-domain surrogates.

Every patch ``k`` carries an *extended* space: its own tensor B-spline dofs
followed, for every edge neighbour ``l``, by a copy of the neighbour's trace
basis on the shared edge. Local matrices are stored in this natural order;
the I/B/C split used by the solver lives in :mod:`ieti_dg.ieti`.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .geometry import patch_sizes, side_points
from .splines import (SIDE_INFO, TensorBasis, collocation, gauss_rule,
                      make_open_knot_vector, quadrature, refine_dyadic)


class AssemblyError(ValueError):
    """Inconsistent discretization data (e.g. non-matching interface geometry)."""


def choose_penalty(p, override=None):
    """Penalty parameter delta; defaults to 2 (p+1)^2."""
    if p < 1:
        raise ValueError("degree must be >= 1")
    if override is not None:
        if override <= 0:
            raise ValueError("penalty override must be positive")
        return float(override)
    return 2.0 * (p + 1) ** 2


@dataclass
class DGConfig:
    delta: float
    # per-patch sizes: H_k, parameter mesh size and physical mesh size
    H: np.ndarray
    hhat: np.ndarray
    h: np.ndarray

    def h_kl(self, k, l):
        return min(self.h[k], self.h[l])

    def hhat_kl(self, k, l):
        return min(self.hhat[k], self.hhat[l])


@dataclass
class TraceBlock:
    """Copy of neighbour ``neighbor``'s trace basis inside patch k's extended space."""

    neighbor: int
    side: str
    neighbor_side: str
    same_orientation: bool
    offset: int
    tangential: np.ndarray      # neighbour's surviving tangential indices
    neighbor_dofs: np.ndarray   # neighbour patch dofs with those traces

    @property
    def size(self):
        return len(self.tangential)

    @property
    def slice(self):
        return slice(self.offset, self.offset + self.size)


@dataclass
class ExtendedSpace:
    k: int
    basis: TensorBasis
    blocks: list

    @property
    def n_patch(self):
        return self.basis.n_dofs

    @property
    def n_total(self):
        return self.n_patch + sum(b.size for b in self.blocks)

    def block(self, neighbor):
        for b in self.blocks:
            if b.neighbor == neighbor:
                return b
        raise KeyError(neighbor)


@dataclass
class InterfaceQuadrature:
    """Merged-mesh Gauss rule on one interface, shared by both patches.

    ``s`` is the side coordinate on the first patch, ``t`` on the second;
    ``w`` are parameter weights and ``ds`` the physical arc-length factor.
    """

    k: int
    l: int
    s: np.ndarray
    t: np.ndarray
    w: np.ndarray
    x: np.ndarray
    ds: np.ndarray

    def param(self, patch):
        return self.s if patch == self.k else self.t


@dataclass
class Discretization:
    mp: object
    bases: list
    config: DGConfig
    spaces: list
    interface_quad: dict = field(default_factory=dict)

    @property
    def K(self):
        return len(self.bases)

    def quad(self, k, l):
        return self.interface_quad[(min(k, l), max(k, l))]


def _tangential_kv(basis, side):
    nd, _ = SIDE_INFO[side]
    return basis.kv[1 - nd]


def discretize(mp, degrees, levels, delta=None, check_tol=1e-10):
    """Build patch bases, extended spaces and interface quadrature.

    ``degrees`` and ``levels`` are per-patch sequences (or scalars). Each
    patch gets a single polynomial element of maximal smoothness refined
    dyadically ``levels[k]`` times.
    """
    K = mp.K
    degrees = np.broadcast_to(np.asarray(degrees, dtype=int), (K,))
    levels = np.broadcast_to(np.asarray(levels, dtype=int), (K,))
    topo = mp.topology
    bases = []
    for k in range(K):
        kv = refine_dyadic(make_open_knot_vector(int(degrees[k]), 1), int(levels[k]))
        bases.append(TensorBasis(kv, kv, topo.dirichlet[k]))
    sizes = np.array([patch_sizes(mp.maps[k], bases[k]) for k in range(K)])
    cfg = DGConfig(choose_penalty(int(degrees.max()), delta),
                   sizes[:, 0], sizes[:, 1], sizes[:, 2])

    spaces = []
    for k in range(K):
        blocks, off = [], bases[k].n_dofs
        for itf in sorted(topo.interfaces_of(k), key=lambda i: i.l):
            dofs, tang = bases[itf.l].side_functions(itf.side_l)
            blocks.append(TraceBlock(itf.l, itf.side_k, itf.side_l,
                                     itf.same_orientation, off, tang, dofs))
            off += len(tang)
        spaces.append(ExtendedSpace(k, bases[k], blocks))

    disc = Discretization(mp, bases, cfg, spaces)
    for itf in topo.interfaces:
        disc.interface_quad[(itf.k, itf.l)] = _interface_quadrature(
            mp, bases, itf, check_tol)
    return disc


def _interface_quadrature(mp, bases, itf, check_tol):
    kv_k = _tangential_kv(bases[itf.k], itf.side_k)
    kv_l = _tangential_kv(bases[itf.l], itf.side_l)
    brk_l = itf.map_param(kv_l.breaks)
    brk = np.unique(np.concatenate([kv_k.breaks, brk_l]))
    # drop near-duplicates produced by the 1 - t reflection
    brk = brk[np.concatenate([[True], np.diff(brk) > 1e-14])]
    brk[0], brk[-1] = 0.0, 1.0
    nq = max(kv_k.p, kv_l.p) + 1
    s, w = gauss_rule(brk, nq)
    t = itf.map_param(s)
    gk, gl = mp.maps[itf.k], mp.maps[itf.l]
    x, J, _ = gk.evaluate(side_points(itf.side_k, s))
    xl = gl.side_curve(itf.side_l, t)
    tol = check_tol * max(gk.H, gl.H)
    if np.abs(x - xl).max() > tol * 1e3:
        raise AssemblyError(
            f"interface {itf.k}-{itf.l}: parameterizations do not match")
    td = 1 - SIDE_INFO[itf.side_k][0]
    ds = np.linalg.norm(J[:, :, td], axis=1)
    return InterfaceQuadrature(itf.k, itf.l, s, t, w, x, ds)


def _side_collocation(basis, side, s):
    """Sparse values and parametric derivatives of all dofs on a side."""
    nd, pos = SIDE_INFO[side]
    c = np.array([float(pos)])
    if nd == 0:
        return basis.tensor_collocation(c, s)
    return basis.tensor_collocation(s, c)


def _outward_normal_coeffs(J, side):
    """Coefficients c = J^{-1} n with n the physical outward unit normal.

    The physical normal derivative of u is then c_1 du/dxi_1 + c_2 du/dxi_2.
    """
    nd, pos = SIDE_INFO[side]
    nhat = np.zeros(2)
    nhat[nd] = 1.0 if pos == 1 else -1.0
    Jinv = np.linalg.inv(J)
    n = np.einsum("qba,b->qa", Jinv, nhat)        # J^{-T} nhat
    n /= np.linalg.norm(n, axis=1)[:, None]
    return np.einsum("qab,qb->qa", Jinv, n)


def _trace_values(basis, block_side, tangential, t):
    """Values of a trace basis (given by surviving tangential indices) at t."""
    kv = _tangential_kv(basis, block_side)
    B, _ = collocation(kv, t)
    return B[:, tangential]


@dataclass
class LocalSystem:
    """Extended-space matrices of one patch, natural ordering."""

    space: ExtendedSpace
    A: sp.csr_matrix
    D: sp.csr_matrix
    f: np.ndarray


def volume_matrices(gmap, basis, f=None, nq=None):
    """Physical stiffness, mass and load of a patch."""
    x1, w1 = quadrature(basis.kv1, nq)
    x2, w2 = quadrature(basis.kv2, nq)
    V, D1, D2 = basis.tensor_collocation(x1, x2)
    x, J, det = gmap.evaluate_grid(x1, x2)
    w = np.outer(w1, w2).ravel() * np.abs(det)
    Jinv = np.linalg.inv(J)
    C = np.einsum("qai,qbi->qab", Jinv, Jinv) * w[:, None, None]
    D = (D1, D2)
    K = sum(D[a].T @ sp.diags(C[:, a, b]) @ D[b] for a in range(2) for b in range(2))
    K = 0.5 * (K + K.T)
    M = V.T @ sp.diags(w) @ V
    load = None
    if f is not None:
        load = V.T @ (w * f(x[:, 0], x[:, 1]))
    return sp.csr_matrix(K), sp.csr_matrix(M), load


def assemble_local(disc, k, f=None):
    """Local SIPG matrix A^(k), dG matrix D^(k) and load of patch k."""
    space = disc.spaces[k]
    basis = space.basis
    gmap = disc.mp.maps[k]
    cfg = disc.config
    K, _, load = volume_matrices(gmap, basis, f)
    n, npch = space.n_total, space.n_patch
    if load is None:
        load = np.zeros(npch)

    rows_m, rows_r = [], []
    for blk in space.blocks:
        q = disc.quad(k, blk.neighbor)
        s = q.param(k)
        t = q.param(blk.neighbor)
        V, D1, D2 = _side_collocation(basis, blk.side, s)
        _, J, _ = gmap.evaluate(side_points(blk.side, s))
        c = _outward_normal_coeffs(J, blk.side)
        N = sp.diags(c[:, 0]) @ D1 + sp.diags(c[:, 1]) @ D2
        T = _trace_values(disc.bases[blk.neighbor], blk.neighbor_side, blk.tangential, t)
        pen = cfg.delta / cfg.h_kl(k, blk.neighbor)
        W = sp.diags(q.w * q.ds)
        # embed V, N, T into the extended space
        Ve = sp.hstack([V, sp.csr_matrix((len(s), n - npch))], format="csr")
        Ne = sp.hstack([N, sp.csr_matrix((len(s), n - npch))], format="csr")
        Te = sp.csr_matrix((T.data, T.indices + blk.offset, T.indptr), shape=(len(s), n))
        jump = Te - Ve                       # u^(k,l) - u^(k)
        m = 0.5 * (Ne.T @ W @ jump)
        rows_m.append(m + m.T)
        rows_r.append(pen * (jump.T @ W @ jump))

    Kx = sp.block_diag([K, sp.csr_matrix((n - npch, n - npch))], format="csr")
    D = Kx + sum(rows_r, sp.csr_matrix((n, n)))
    A = D + sum(rows_m, sp.csr_matrix((n, n)))
    fe = np.concatenate([load, np.zeros(n - npch)])
    return LocalSystem(space, _symmetrize(A), _symmetrize(D), fe)


def _symmetrize(a):
    a = sp.csr_matrix(0.5 * (a + a.T))
    a.eliminate_zeros()
    return a


@dataclass
class EdgeProjection:
    """L2 projection of patch k's edge trace onto the neighbour trace space.

    ``mix`` couples the trace basis (rows) to the patch's side functions
    (columns, patch dofs ``side_dofs``).
    """

    mass: np.ndarray
    mix: np.ndarray
    side_dofs: np.ndarray
    n_patch: int
    _chol: tuple = None

    def __post_init__(self):
        try:
            self._chol = scipy.linalg.cho_factor(self.mass, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise AssemblyError("edge mass matrix is not positive definite") from exc

    def apply(self, u):
        """Projection coefficients of the trace of patch function ``u``."""
        u = np.asarray(u)
        return scipy.linalg.cho_solve(self._chol, self.mix @ u[self.side_dofs])

    def apply_transpose(self, y):
        """Transpose action, returned as a patch-sized vector."""
        out = np.zeros((self.n_patch,) + np.shape(y)[1:])
        out[self.side_dofs] = self.mix.T @ scipy.linalg.cho_solve(self._chol, y)
        return out

    def matrix(self):
        """Dense projection matrix mapping patch coefficients to trace coefficients."""
        P = np.zeros((self.mass.shape[0], self.n_patch))
        P[:, self.side_dofs] = scipy.linalg.cho_solve(self._chol, self.mix)
        return P


def build_edge_projection(disc, k, l):
    """Parameter-domain projection pi^(k,l) on the interface of patches k and l."""
    space = disc.spaces[k]
    blk = space.block(l)
    q = disc.quad(k, l)
    s, t = q.param(k), q.param(l)
    T = _trace_values(disc.bases[l], blk.neighbor_side, blk.tangential, t).toarray()
    dofs, tang = space.basis.side_functions(blk.side)
    S = _trace_values(space.basis, blk.side, tang, s).toarray()
    Wt = T * q.w[:, None]
    mass = 0.5 * (Wt.T @ T + T.T @ Wt)
    return EdgeProjection(mass, Wt.T @ S, dofs, space.n_patch)


@dataclass
class ParameterMatrices:
    """Parameter-domain matrices of one patch.

    ``factors`` holds the Dirichlet-reduced univariate (M, K) pairs defining
    D1~ = K1 x M2 + M1 x K2 + alpha M1 x M2; ``edge_mass`` the blocks of
    D2~ (already scaled by delta / hhat_kl); ``Dhat`` the extended-space
    matrix of the parameter dG form; ``projections`` the edge projections.
    """

    factors: list
    alpha: float
    edge_mass: list
    Dhat: sp.csr_matrix
    projections: list

    def dtilde1(self):
        (M1, K1), (M2, K2) = self.factors
        return (np.kron(K1, M2) + np.kron(M1, K2) + self.alpha * np.kron(M1, M2))

    def mass(self):
        (M1, _), (M2, _) = self.factors
        return np.kron(M1, M2)


def assemble_parameter_matrices(disc, k):
    space = disc.spaces[k]
    basis = space.basis
    cfg = disc.config
    factors = basis.reduced_matrices()
    alpha = 0.0 if basis.dirichlet else 1.0
    (M1, K1), (M2, K2) = factors
    n, npch = space.n_total, space.n_patch
    Kp = sp.kron(sp.csr_matrix(K1), sp.csr_matrix(M2)) + sp.kron(sp.csr_matrix(M1), sp.csr_matrix(K2))
    Dhat = sp.block_diag([Kp, sp.csr_matrix((n - npch, n - npch))], format="csr")
    edge_mass, projections = [], []
    for blk in space.blocks:
        q = disc.quad(k, blk.neighbor)
        s = q.param(k)
        V, _, _ = _side_collocation(basis, blk.side, s)
        T = _trace_values(disc.bases[blk.neighbor], blk.neighbor_side, blk.tangential,
                          q.param(blk.neighbor))
        Ve = sp.hstack([V, sp.csr_matrix((len(s), n - npch))], format="csr")
        Te = sp.csr_matrix((T.data, T.indices + blk.offset, T.indptr), shape=(len(s), n))
        jump = Te - Ve
        pen = cfg.delta / cfg.hhat_kl(k, blk.neighbor)
        Dhat = Dhat + pen * (jump.T @ sp.diags(q.w) @ jump)
        proj = build_edge_projection(disc, k, blk.neighbor)
        projections.append(proj)
        edge_mass.append(pen * proj.mass)
    return ParameterMatrices(factors, alpha, edge_mass, _symmetrize(Dhat), projections)


def evaluate_patch(disc, k, coeffs, x1, x2):
    """Physical points, values and physical gradients of a patch function.

    Evaluated on the tensor grid x1 x x2; also returns |det J|.
    """
    basis = disc.bases[k]
    V, D1, D2 = basis.tensor_collocation(x1, x2)
    x, J, det = disc.mp.maps[k].evaluate_grid(x1, x2)
    u = V @ coeffs
    gref = np.stack([D1 @ coeffs, D2 @ coeffs], axis=1)
    grad = np.einsum("qba,qb->qa", np.linalg.inv(J), gref)  # J^{-T} grad_ref
    return x, u, grad, np.abs(det)


def side_values(disc, k, side, coeffs, s):
    """Trace values of a patch function along a side."""
    V, _, _ = _side_collocation(disc.bases[k], side, s)
    return V @ coeffs
