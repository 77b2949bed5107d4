"""Dof bookkeeping, jump matrix, primal basis and the IETI-DP saddle system."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_local, assemble_parameter_matrices
from .fastdiag import (LocalPreconditioner, PatchSchur, ScaledDirichlet,
                       parameter_interior_solver, richardson_damping,
                       richardson_wrap)
from .krylov import SolveReport, SolverError, minres, pcg
from .linalg import DenseCholesky, SparseFactor
from .splines import CORNERS, SIDE_INFO

VARIANTS = ("mfd", "mfd2", "mlu", "cglu")

# corner of a patch reached at the start / end of a side's tangential direction
_SIDE_ENDS = {
    "west": ("sw", "nw"),
    "east": ("se", "ne"),
    "south": ("sw", "se"),
    "north": ("nw", "ne"),
}


@dataclass
class DofClassification:
    """Index sets of one extended space, in natural extended numbering.

    ``c_keys[i]`` identifies the primal dof of ``C[i]`` as ``(owner, corner)``:
    the corner function of patch ``owner`` at its corner ``corner``.
    """

    I: np.ndarray
    B: np.ndarray
    C: np.ndarray
    c_keys: list
    trace_delta: list

    @property
    def delta(self):
        return np.sort(np.concatenate([self.I, self.B]))

    @property
    def gamma(self):
        return np.sort(np.concatenate([self.B, self.C]))

    @property
    def order(self):
        """Permutation listing I, then B, then C."""
        return np.concatenate([self.I, self.B, self.C])


def classify_dofs(disc, k):
    """Split patch k's extended dofs into interior, interface and primal sets.

    Primal dofs are the patch's own corner functions that survive the
    Dirichlet reduction, together with the trace entries copying a
    neighbour's corner function.
    """
    space = disc.spaces[k]
    basis = space.basis
    n = space.n_total
    is_c = np.zeros(n, dtype=bool)
    keys = {}
    for corner in CORNERS:
        d = basis.corner_dof(corner)
        if d >= 0:
            is_c[d] = True
            keys[d] = (k, corner)
    trace_delta = []
    for blk in space.blocks:
        nb = disc.bases[blk.neighbor]
        n_full = nb.kv[1 - SIDE_INFO[blk.neighbor_side][0]].n
        ends = _SIDE_ENDS[blk.neighbor_side]
        mask = np.ones(blk.size, dtype=bool)
        for j, t in enumerate(blk.tangential):
            if t == 0 or t == n_full - 1:
                mask[j] = False
                e = blk.offset + j
                is_c[e] = True
                keys[e] = (blk.neighbor, ends[0 if t == 0 else 1])
        trace_delta.append(mask)
    interior = np.zeros(n, dtype=bool)
    interior[: space.n_patch] = basis.interior_mask()
    C = np.flatnonzero(is_c)
    return DofClassification(
        I=np.flatnonzero(interior),
        B=np.flatnonzero(~interior & ~is_c),
        C=C,
        c_keys=[keys[i] for i in C],
        trace_delta=trace_delta,
    )


def primal_numbering(disc):
    """Global ids of the primal dofs, keyed by ``(patch, corner)``."""
    ids = {}
    for k, b in enumerate(disc.bases):
        for corner in CORNERS:
            if b.corner_dof(corner) >= 0:
                ids[(k, corner)] = len(ids)
    return ids


@dataclass
class JumpMatrix:
    """Signed constraint matrix B, stored as one sparse block per patch."""

    blocks: list
    n_rows: int

    def matrix(self):
        return sp.hstack(self.blocks, format="csr")

    def multiplicity(self, k):
        """Number of multipliers acting on each extended dof of patch k."""
        return np.asarray(abs(self.blocks[k]).sum(axis=0)).ravel()


def build_jump_matrix(disc, classes):
    """Rows enforce u^(k) = u^(l,k) on non-primal trace functions, both ways."""
    rows = [[] for _ in range(disc.K)]      # (row, col, val) triplets per patch
    n_rows = 0
    for l in range(disc.K):
        space_l = disc.spaces[l]
        for b, blk in enumerate(space_l.blocks):
            k = blk.neighbor
            for j in np.flatnonzero(classes[l].trace_delta[b]):
                rows[k].append((n_rows, int(blk.neighbor_dofs[j]), 1.0))
                rows[l].append((n_rows, blk.offset + int(j), -1.0))
                n_rows += 1
    blocks = []
    for k in range(disc.K):
        n = disc.spaces[k].n_total
        if rows[k]:
            r, c, v = map(np.array, zip(*rows[k]))
        else:
            r = c = np.zeros(0, dtype=int)
            v = np.zeros(0)
        blocks.append(sp.csr_matrix((v, (r, c)), shape=(n_rows, n)))
    return JumpMatrix(blocks, n_rows)


@dataclass
class PatchData:
    """Per-patch blocks used by the saddle system."""

    local: object
    cls: DofClassification
    A_dd: sp.csr_matrix
    A_dc: sp.csr_matrix
    A_cc: sp.csr_matrix
    f_d: np.ndarray
    f_c: np.ndarray
    B_d: sp.csr_matrix
    G: np.ndarray = None
    psi_d: np.ndarray = None


def _patch_data(ls, cls, B):
    A = ls.A.tocsr()
    d, c = cls.delta, cls.C
    A_d = A[d]
    return PatchData(
        local=ls, cls=cls,
        A_dd=A_d[:, d].tocsr(), A_dc=A_d[:, c].tocsr(), A_cc=A[c][:, c].toarray(),
        f_d=ls.f[d], f_c=ls.f[c], B_d=B.tocsc()[:, d].tocsr())


@dataclass
class PrimalBasis:
    psi_d: list
    G: list
    A_psi: np.ndarray
    f_pi: np.ndarray
    chol: DenseCholesky
    reports: list = field(default_factory=list)

    @property
    def n(self):
        return self.A_psi.shape[0]


def build_primal_basis(patches, ids, solvers, mode="direct", eps_c=1e-10, maxit=None):
    """Energy-minimizing primal basis and coarse matrix A_Psi = Psi^T A Psi.

    ``solvers[k]`` is a sparse factorization of A_dd (direct mode) or the
    local preconditioner used by PCG (pcg mode).
    """
    n_pi = len(ids)
    A_psi = np.zeros((n_pi, n_pi))
    f_pi = np.zeros(n_pi)
    psis, Gs, reports = [], [], []
    for pd, solver in zip(patches, solvers):
        nc = len(pd.cls.C)
        G = np.array([ids[key] for key in pd.cls.c_keys], dtype=int)
        rhs = -pd.A_dc.toarray()
        if nc == 0:
            psi = np.zeros((pd.A_dd.shape[0], 0))
        elif mode == "direct":
            psi = solver.solve(rhs)
            psi = psi.reshape(rhs.shape)
        elif mode == "pcg":
            n = pd.A_dd.shape[0]
            mi = maxit or max(500, int(10 * np.sqrt(n)))
            psi = np.zeros_like(rhs)
            for j in range(nc):
                psi[:, j], rep = pcg(pd.A_dd, solver, rhs[:, j], eps_c, mi)
                reports.append(rep)
        else:
            raise ValueError(f"unknown primal basis mode {mode!r}")
        # Psi^T A Psi with Psi = [psi; I]
        loc = psi.T @ (pd.A_dd @ psi) + psi.T @ (-rhs) + (-rhs).T @ psi + pd.A_cc
        loc = 0.5 * (loc + loc.T)
        A_psi[np.ix_(G, G)] += loc
        np.add.at(f_pi, G, psi.T @ pd.f_d + pd.f_c)
        pd.G, pd.psi_d = G, psi
        psis.append(psi)
        Gs.append(G)
    chol = DenseCholesky(A_psi) if n_pi else None
    return PrimalBasis(psis, Gs, A_psi, f_pi, chol, reports)


class _Timed:
    """Wrap a callable and accumulate its wall time."""

    def __init__(self, fn):
        self.fn = fn
        self.elapsed = 0.0
        self.calls = 0

    def __call__(self, x):
        t = time.perf_counter()
        y = self.fn(x)
        self.elapsed += time.perf_counter() - t
        self.calls += 1
        return y


class SaddleSystem:
    """Block system for (u_Delta, u_Pi, lambda) and its block preconditioner."""

    def __init__(self, patches, primal, jump, local_precs, dirichlet):
        self.patches = patches
        self.primal = primal
        self.jump = jump
        self.n_lambda = jump.n_rows
        self.n_pi = primal.n
        sizes = [pd.A_dd.shape[0] for pd in patches]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.n_delta = int(self.offsets[-1])
        self.n = self.n_delta + self.n_pi + self.n_lambda
        # B Psi as a dense (n_lambda, n_pi) matrix
        BPsi = np.zeros((self.n_lambda, self.n_pi))
        for pd in patches:
            if len(pd.G):
                BPsi[:, pd.G] += pd.B_d @ pd.psi_d
        self.BPsi = BPsi
        self.local_precs = [_Timed(p) for p in local_precs]
        self.dirichlet = _Timed(dirichlet)

    def split(self, x):
        nd, npi = self.n_delta, self.n_pi
        return x[:nd], x[nd:nd + npi], x[nd + npi:]

    def _patch_slices(self):
        for k, pd in enumerate(self.patches):
            yield k, pd, slice(self.offsets[k], self.offsets[k + 1])

    def rhs(self):
        f_d = np.concatenate([pd.f_d for pd in self.patches])
        return np.concatenate([f_d, self.primal.f_pi, np.zeros(self.n_lambda)])

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}")
        u_d, u_pi, lam = self.split(x)
        y_d = np.empty(self.n_delta)
        y_lam = self.BPsi @ u_pi
        for k, pd, sl in self._patch_slices():
            y_d[sl] = pd.A_dd @ u_d[sl] + pd.B_d.T @ lam
            y_lam += pd.B_d @ u_d[sl]
        y_pi = self.primal.A_psi @ u_pi + self.BPsi.T @ lam
        return np.concatenate([y_d, y_pi, y_lam])

    __call__ = apply

    def apply_prec(self, x):
        u_d, u_pi, lam = self.split(np.asarray(x, dtype=float))
        y_d = np.empty(self.n_delta)
        for k, pd, sl in self._patch_slices():
            y_d[sl] = self.local_precs[k](u_d[sl])
        y_pi = self.primal.chol.solve(u_pi) if self.n_pi else u_pi.copy()
        y_lam = self.dirichlet(lam) if self.n_lambda else lam.copy()
        return np.concatenate([y_d, y_pi, y_lam])

    def recover(self, u_d, u_pi):
        """Extended-space solutions u = (u_Delta; 0) + Psi u_Pi for every patch."""
        out = []
        for k, pd, sl in self._patch_slices():
            n = pd.local.space.n_total
            u = np.zeros(n)
            u[pd.cls.delta] = u_d[sl] + pd.psi_d @ u_pi[pd.G]
            u[pd.cls.C] = u_pi[pd.G]
            out.append(u)
        return out

    @property
    def apply_local_time(self):
        return sum(p.elapsed for p in self.local_precs)

    @property
    def apply_dirichlet_time(self):
        return self.dirichlet.elapsed


def apply_saddle(system, x):
    return system.apply(x)


@dataclass
class IETIResult:
    coefficients: list
    extended: list
    report: SolveReport
    timings: dict
    system: SaddleSystem


def build_ieti(disc, f, variant="mfd", eps=1e-8, eps_c=None, nu=2, jobs=1):
    """Assemble all local data and the saddle system for one solver variant.

    ``jobs`` > 1 runs the per-patch assembly and setup in a thread pool.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    eps_c = eps / 100.0 if eps_c is None else eps_c
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return _build(disc, f, variant, eps_c, nu, lambda fn, it: list(ex.map(fn, it)))
    return _build(disc, f, variant, eps_c, nu, lambda fn, it: list(map(fn, it)))


def _build(disc, f, variant, eps_c, nu, pmap):
    timings = {}
    t = time.perf_counter()
    locals_ = pmap(lambda k: assemble_local(disc, k, f), range(disc.K))
    classes = [classify_dofs(disc, k) for k in range(disc.K)]
    jump = build_jump_matrix(disc, classes)
    patches = [_patch_data(ls, cls, jump.blocks[k])
               for k, (ls, cls) in enumerate(zip(locals_, classes))]
    ids = primal_numbering(disc)
    timings["t_assembly"] = time.perf_counter() - t

    inexact = variant in ("mfd", "mfd2")
    t = time.perf_counter()
    if inexact:
        pms = pmap(lambda k: assemble_parameter_matrices(disc, k), range(disc.K))
        P = pmap(lambda k: LocalPreconditioner(
            pms[k], patches[k].local.space,
            patches[k].cls.C[patches[k].cls.C < patches[k].local.space.n_patch],
            patches[k].cls.trace_delta), range(disc.K))
        if variant == "mfd2":
            first = [richardson_wrap(p, pd.A_dd, nu, richardson_damping(p, pd.A_dd))
                     for p, pd in zip(P, patches)]
        else:
            first = P
        solvers = P
    else:
        pms = None
        solvers = pmap(lambda pd: SparseFactor(pd.A_dd), patches)
        first = [s.solve for s in solvers]
    timings["t_setup_local"] = time.perf_counter() - t

    t = time.perf_counter()
    primal = build_primal_basis(patches, ids, solvers, "pcg" if inexact else "direct", eps_c)
    timings["t_psi"] = time.perf_counter() - t

    t = time.perf_counter()
    dirichlet = build_scaled_dirichlet(disc, patches, jump, pms)
    timings["t_setup_dirichlet"] = time.perf_counter() - t
    return SaddleSystem(patches, primal, jump, first, dirichlet), timings


def build_scaled_dirichlet(disc, patches, jump, pms=None):
    """Scaled Dirichlet preconditioner; parameter-domain version if ``pms`` given."""
    Bg, scal, schurs = [], [], []
    for k, pd in enumerate(patches):
        cls = pd.cls
        gamma, interior = cls.gamma, cls.I
        if pms is not None:
            fd = parameter_interior_solver(pms[k], disc.bases[k])
            S = PatchSchur(pms[k].Dhat, interior, gamma, fd.solve)
        else:
            A = pd.local.A
            fac = SparseFactor(A[interior][:, interior])
            S = PatchSchur(A, interior, gamma, fac.solve)
        B = jump.blocks[k].tocsc()[:, gamma].tocsr()
        Bg.append(B)
        scal.append(1.0 + jump.multiplicity(k)[gamma])
        schurs.append(S)
    return ScaledDirichlet(Bg, scal, schurs)


def solve_ieti(disc, f, variant="mfd", eps=1e-8, eps_c=None, nu=2, maxit=5000, jobs=1):
    """Solve the dG system with one IETI-DP variant; returns an :class:`IETIResult`."""
    t0 = time.perf_counter()
    system, timings = build_ieti(disc, f, variant, eps, eps_c, nu, jobs)
    t = time.perf_counter()
    if variant == "cglu":
        u_d, u_pi, rep = _solve_dual(system, eps, maxit)
    else:
        x, rep = minres(system.apply, system.apply_prec, system.rhs(), eps, maxit)
        u_d, u_pi, _ = system.split(x)
    timings["t_solve"] = time.perf_counter() - t
    timings["t_apply_local"] = system.apply_local_time
    timings["t_apply_dirichlet"] = system.apply_dirichlet_time
    ext = system.recover(u_d, u_pi)
    coeffs = [u[: sp_.n_patch] for u, sp_ in zip(ext, disc.spaces)]
    timings["t_total"] = time.perf_counter() - t0
    return IETIResult(coeffs, ext, rep, timings, system)


def _solve_dual(system, eps, maxit):
    """PCG on the dual Schur system F lambda = d, then back substitution."""
    loc = system.local_precs
    chol = system.primal.chol
    n_pi = system.n_pi

    def coarse(v):
        return chol.solve(v) if n_pi else v

    def F(lam):
        out = system.BPsi @ coarse(system.BPsi.T @ lam)
        for k, pd, sl in system._patch_slices():
            out += pd.B_d @ loc[k](pd.B_d.T @ lam)
        return out

    d = system.BPsi @ coarse(system.primal.f_pi)
    for k, pd, sl in system._patch_slices():
        d += pd.B_d @ loc[k](pd.f_d)
    if system.n_lambda:
        lam, rep = pcg(F, system.dirichlet, d, eps, maxit, criterion="prec")
    else:
        lam, rep = np.zeros(0), SolveReport(converged=True)
    u_pi = coarse(system.primal.f_pi - system.BPsi.T @ lam)
    u_d = np.empty(system.n_delta)
    for k, pd, sl in system._patch_slices():
        u_d[sl] = loc[k](pd.f_d - pd.B_d.T @ lam)
    return u_d, u_pi, rep


__all__ = ["VARIANTS", "DofClassification", "classify_dofs", "primal_numbering",
           "JumpMatrix", "build_jump_matrix", "PrimalBasis", "build_primal_basis",
           "SaddleSystem", "apply_saddle", "build_ieti", "build_scaled_dirichlet",
           "solve_ieti", "IETIResult", "SolverError"]
