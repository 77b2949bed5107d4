"""Small dense and sparse kernels used throughout the solver.

Dense work is delegated to LAPACK through :mod:`scipy.linalg`; sparse
factorizations use SuperLU through :mod:`scipy.sparse.linalg`.
"""

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg


class FactorizationError(RuntimeError):
    """Raised when a factorization meets a non-SPD or singular matrix."""


def _check_symmetric(a, tol=1e-12):
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > tol * scale:
        raise ValueError("matrix is not symmetric")


def sym_eig(a):
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix."""
    a = np.asarray(a, dtype=float)
    _check_symmetric(a)
    return scipy.linalg.eigh(a)


def gen_sym_eig(k, m):
    """Solve ``k z = lam m z`` with ``m`` SPD; eigenvectors are m-orthonormal."""
    k = np.asarray(k, dtype=float)
    m = np.asarray(m, dtype=float)
    _check_symmetric(k)
    _check_symmetric(m)
    try:
        l = scipy.linalg.cholesky(m, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError("mass matrix is not positive definite") from exc
    # reduce to a standard problem: L^-1 K L^-T y = lam y, z = L^-T y
    c = scipy.linalg.solve_triangular(l, k, lower=True)
    c = scipy.linalg.solve_triangular(l, c.T, lower=True)
    lam, y = scipy.linalg.eigh(0.5 * (c + c.T))
    z = scipy.linalg.solve_triangular(l.T, y, lower=False)
    return lam, z


class DenseCholesky:
    """Cholesky factorization ``A = L L^T`` of a dense SPD matrix."""

    def __init__(self, a):
        a = np.asarray(a, dtype=float)
        try:
            self.L = scipy.linalg.cholesky(a, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise FactorizationError("matrix is not positive definite") from exc
        self.shape = a.shape

    def solve(self, b):
        return scipy.linalg.cho_solve((self.L, True), b)


class DenseLU:
    def __init__(self, a):
        a = np.asarray(a, dtype=float)
        if a.size == 0:
            self.lu = None
        else:
            self.lu = scipy.linalg.lu_factor(a)
            if np.any(np.abs(np.diag(self.lu[0])) <= 1e-14 * max(np.abs(a).max(), 1.0)):
                raise FactorizationError("matrix is singular")
        self.shape = a.shape

    def solve(self, b):
        if self.lu is None:
            return np.array(b, dtype=float, copy=True)
        return scipy.linalg.lu_solve(self.lu, b)


class SparseFactor:
    """Sparse direct factorization of a symmetric matrix.

    SuperLU with a symmetric-structure ordering; for SPD input this plays the
    role of a sparse Cholesky factorization.
    """

    def __init__(self, a):
        a = sp.csc_matrix(a)
        self.shape = a.shape
        self.nnz_factor = 0
        if a.shape[0] == 0:
            self._lu = None
            return
        try:
            self._lu = scipy.sparse.linalg.splu(
                a, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise FactorizationError(str(exc)) from exc
        self.nnz_factor = self._lu.L.nnz + self._lu.U.nnz

    def solve(self, b):
        if self._lu is None:
            return np.zeros_like(b, dtype=float)
        b = np.asarray(b, dtype=float)
        return self._lu.solve(b)


def cholesky(a):
    """Factor an SPD matrix, dense or sparse."""
    if sp.issparse(a):
        return SparseFactor(a)
    return DenseCholesky(a)


def lu(a):
    if sp.issparse(a):
        return SparseFactor(a)
    return DenseLU(a)


def solve(factor, b):
    return factor.solve(b)


def kron_matvec(a1, a2, x):
    """Compute ``(a1 kron a2) x`` without forming the Kronecker product.

    ``x`` is laid out lexicographically with the second factor's index
    running fastest. Accepts a vector or a matrix of column vectors.
    """
    n1, m1 = a1.shape
    n2, m2 = a2.shape
    x = np.asarray(x)
    if x.shape[0] != m1 * m2:
        raise ValueError(f"size mismatch: {x.shape[0]} != {m1}*{m2}")
    if x.ndim == 1:
        X = x.reshape(m1, m2)
        return (a1 @ X @ a2.T).reshape(n1 * n2)
    k = x.shape[1]
    X = x.reshape(m1, m2, k)
    Y = np.einsum("ia,abk->ibk", a1, X)
    Y = np.einsum("jb,ibk->ijk", a2, Y)
    return Y.reshape(n1 * n2, k)
