"""Fast diagonalization, Sherman-Morrison-Woodbury corner correction and the
inexact local and Dirichlet preconditioners built on them."""

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .linalg import DenseLU, FactorizationError, gen_sym_eig, kron_matvec


class FDSolver:
    """Inverse of ``K1 x M2 + M1 x K2 + alpha M1 x M2`` via fast diagonalization.

    Vectors are ordered with the second direction running fastest.
    """

    def __init__(self, M1, K1, M2, K2, alpha=0.0, tol=1e-12):
        self.alpha = float(alpha)
        self.M = (np.asarray(M1, float), np.asarray(M2, float))
        self.K = (np.asarray(K1, float), np.asarray(K2, float))
        self.shape = (self.M[0].shape[0], self.M[1].shape[0])
        if 0 in self.shape:
            self.lam, self.Z = (np.zeros(0), np.zeros(0)), (None, None)
            self.denom = np.zeros(self.shape)
            self.singular = False
            return
        self.lam, self.Z = zip(*(gen_sym_eig(k, m) for k, m in zip(self.K, self.M)))
        self.denom = self.lam[0][:, None] + self.lam[1][None, :] + self.alpha
        scale = max(np.abs(self.denom).max(), 1.0)
        self.singular = bool(np.any(np.abs(self.denom) <= tol * scale))

    @property
    def n(self):
        return self.shape[0] * self.shape[1]

    def matvec(self, x):
        (M1, M2), (K1, K2) = self.M, self.K
        y = kron_matvec(K1, M2, x) + kron_matvec(M1, K2, x)
        if self.alpha:
            y = y + self.alpha * kron_matvec(M1, M2, x)
        return y

    def solve(self, b):
        if self.singular:
            raise FactorizationError("Kronecker operator is singular (constant mode)")
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        Z1, Z2 = self.Z
        n1, n2 = self.shape
        if b.ndim == 1:
            Y = Z1.T @ b.reshape(n1, n2) @ Z2
            return (Z1 @ (Y / self.denom) @ Z2.T).reshape(-1)
        B = b.reshape(n1, n2, -1)
        Y = np.einsum("ai,abk,bj->ijk", Z1, B, Z2, optimize=True)
        Y /= self.denom[:, :, None]
        return np.einsum("ia,abk,jb->ijk", Z1, Y, Z2, optimize=True).reshape(n1 * n2, -1)


def fd_factorize(M1, K1, M2, K2, alpha=0.0):
    return FDSolver(M1, K1, M2, K2, alpha)


def fd_apply_inverse(fd, b):
    return fd.solve(b)


class SMWSolver:
    """Inverse of the Delta-Delta block of a Kronecker-sum matrix.

    The coupling between the corner dofs ``c`` and the rest is removed by
    a rank-2|C| Sherman-Morrison-Woodbury update of the FD inverse.
    """

    def __init__(self, fd, c):
        self.fd = fd
        n = fd.n
        self.c = np.asarray(c, dtype=int)
        mask = np.ones(n, dtype=bool)
        mask[self.c] = False
        self.delta = np.flatnonzero(mask)
        nc = len(self.c)
        if nc == 0:
            self.W = self.cap = None
            return
        E = np.zeros((n, nc))
        E[self.c, np.arange(nc)] = 1.0
        col = fd.matvec(E)                 # columns D[:, C]
        DdC = col.copy()
        DdC[self.c] = 0.0                  # D_{Delta C}, zero on C rows
        U = np.hstack([DdC, E])
        # V^T = [[0, I_CC], [D_{C Delta}, 0]] as a (2|C|, n) matrix
        self.Vt = np.vstack([E.T, DdC.T])
        self.W = fd.solve(U)
        self.cap = DenseLU(np.eye(2 * nc) - self.Vt @ self.W)

    def solve(self, b_delta):
        b_delta = np.asarray(b_delta, dtype=float)
        full = np.zeros((self.fd.n,) + b_delta.shape[1:])
        full[self.delta] = b_delta
        y = self.fd.solve(full)
        if self.W is not None:
            y = y + self.W @ self.cap.solve(self.Vt @ y)
        return y[self.delta]


def smw_apply(smw, b_delta):
    return smw.solve(b_delta)


class LocalPreconditioner:
    """P = sum_i E_i,DD (D~_i,DD)^{-1} E_i,DD^T on the Delta dofs of a patch.

    ``pm`` are the parameter matrices of the patch, ``c_patch`` the patch
    dofs classified as primal and ``trace_delta`` a list with, for every
    trace block, the boolean mask of its Delta entries.
    """

    def __init__(self, pm, space, c_patch, trace_delta):
        (M1, K1), (M2, K2) = pm.factors
        self.space = space
        self.fd = FDSolver(M1, K1, M2, K2, pm.alpha)
        self.smw = SMWSolver(self.fd, c_patch)
        self.patch_delta = self.smw.delta
        self.projections = pm.projections
        self.trace_delta = [np.flatnonzero(m) for m in trace_delta]
        self.edge_chol = []
        for Me, idx in zip(pm.edge_mass, self.trace_delta):
            sub = Me[np.ix_(idx, idx)]
            self.edge_chol.append(scipy.linalg.cho_factor(sub, lower=True) if len(idx) else None)
        # layout of the Delta vector: patch Delta dofs, then trace Delta entries per block
        offs = [len(self.patch_delta)]
        for idx in self.trace_delta:
            offs.append(offs[-1] + len(idx))
        self.offsets = offs
        self.n = offs[-1]

    def _trace_slices(self):
        for b, idx in enumerate(self.trace_delta):
            yield b, idx, slice(self.offsets[b], self.offsets[b + 1])

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        if r.shape[0] != self.n:
            raise ValueError(f"expected {self.n} Delta entries, got {r.shape[0]}")
        npd = len(self.patch_delta)
        npatch = self.space.n_patch
        # E1^T: patch part plus transposed projections of the trace parts
        z = np.zeros((npatch,) + r.shape[1:])
        z[self.patch_delta] = r[:npd]
        out = np.zeros_like(r)
        for b, idx, sl in self._trace_slices():
            proj = self.projections[b]
            y = np.zeros((proj.mass.shape[0],) + r.shape[1:])
            y[idx] = r[sl]
            z += proj.apply_transpose(y)
            if self.edge_chol[b] is not None:
                out[sl] = scipy.linalg.cho_solve(self.edge_chol[b], r[sl])
        w = self.smw.solve(z[self.patch_delta])
        full = np.zeros_like(z)
        full[self.patch_delta] = w
        out[:npd] += w
        for b, idx, sl in self._trace_slices():
            out[sl] += self.projections[b].apply(full)[idx]
        return out

    __call__ = apply


def apply_local_preconditioner(prec, r):
    return prec.apply(r)


def richardson_wrap(prec, A, nu, omega=1.0):
    """Operator of nu preconditioned Richardson steps for ``A x = r`` from x = 0.

    Each step is ``x <- x + omega P (r - A x)``; with omega = 1 this is
    (I - (I - PA)^nu) A^{-1}, and nu = 1 returns P itself.
    """
    if nu < 1:
        raise ValueError("Richardson order must be >= 1")
    if omega <= 0:
        raise ValueError("Richardson damping must be positive")

    def apply(r):
        x = prec(r)
        if omega != 1.0:
            x = omega * x
        for _ in range(nu - 1):
            step = prec(r - A @ x)
            x = x + (step if omega == 1.0 else omega * step)
        return x

    return apply


def richardson_damping(prec, A, n_steps=30, safety=1.1, seed=0):
    """Step length for R^(nu)(P, A) that keeps the operator positive definite.

    The plain step 1 is kept whenever the estimated largest eigenvalue of
    PA, inflated by ``safety``, stays below 2. Otherwise the optimal
    Richardson step 2 / (lambda_min + safety * lambda_max) is used. The
    extremes come from the Lanczos tridiagonal of a short PCG run with a
    fixed-seed right-hand side.
    """
    from .krylov import SolverError, pcg

    n = A.shape[0]
    if n == 0:
        return 1.0
    b = np.random.default_rng(seed).standard_normal(n)
    try:
        _, rep = pcg(A, prec, b, tol=1e-14, maxit=min(n_steps, n))
    except SolverError as exc:
        rep = exc.report
    if rep is None or not np.isfinite(rep.eig_max):
        return 1.0
    if safety * rep.eig_max < 2.0:
        return 1.0
    return 2.0 / (rep.eig_min + safety * rep.eig_max)


class PatchSchur:
    """Action of a patch Schur complement onto the Gamma dofs.

    ``M`` is the extended-space matrix; ``interior`` the I dofs. The inverse
    of the I-I block is provided as a callable ``solve_ii``.
    """

    def __init__(self, M, interior, gamma, solve_ii):
        M = sp.csr_matrix(M)
        self.gamma = np.asarray(gamma)
        self.interior = np.asarray(interior)
        self.M_gg = M[self.gamma][:, self.gamma]
        self.M_gi = M[self.gamma][:, self.interior]
        self.M_ig = M[self.interior][:, self.gamma]
        self.solve_ii = solve_ii

    def apply(self, v):
        out = self.M_gg @ v
        if len(self.interior):
            out = out - self.M_gi @ self.solve_ii(self.M_ig @ v)
        return out

    def dense(self):
        return self.apply(np.eye(len(self.gamma)))


class ScaledDirichlet:
    """Scaled Dirichlet preconditioner B_G D^{-1} S D^{-1} B_G^T.

    ``blocks`` holds, per patch, the sparse jump block restricted to the
    Gamma dofs (rows: all multipliers), the multiplicity scaling of the
    Gamma dofs and a :class:`PatchSchur`.
    """

    def __init__(self, jump_gamma, scaling, schurs):
        self.B = [sp.csr_matrix(b) for b in jump_gamma]
        self.scaling = [np.asarray(s, dtype=float) for s in scaling]
        self.schurs = schurs
        self.n = self.B[0].shape[0] if self.B else 0

    def apply(self, q):
        q = np.asarray(q, dtype=float)
        out = np.zeros_like(q)
        for B, d, S in zip(self.B, self.scaling, self.schurs):
            if B.nnz == 0:
                continue
            v = (B.T @ q) / d
            out += B @ (S.apply(v) / d)
        return out

    __call__ = apply


def apply_scaled_dirichlet(sd, q):
    return sd.apply(q)


def parameter_interior_solver(pm, basis):
    """FD solver of the parameter stiffness restricted to patch-interior dofs."""
    (M1, K1), (M2, K2) = pm.factors
    ii = []
    for d in range(2):
        a = basis.active[d]
        ii.append(np.flatnonzero((a > 0) & (a < basis.kv[d].n - 1)))
    fd = FDSolver(M1[np.ix_(ii[0], ii[0])], K1[np.ix_(ii[0], ii[0])],
                  M2[np.ix_(ii[1], ii[1])], K2[np.ix_(ii[1], ii[1])], 0.0)
    return fd
