"""Preconditioned CG and MINRES with Lanczos extreme-eigenvalue estimates."""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal


class SolverError(RuntimeError):
    """Krylov breakdown or failure to converge; carries the partial report."""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    eig_min: float = float("nan")
    eig_max: float = float("nan")
    kappa: float = float("nan")
    wall_time: float = 0.0
    converged: bool = False
    memory_peak: int = None


def _as_callable(op):
    if op is None:
        return lambda x: x
    if callable(op):
        return op
    return lambda x: op @ x


def lanczos_condition_estimate(diag, off):
    """Extreme eigenvalues of the symmetric tridiagonal matrix (diag, off).

    Returns ``(eig_min, eig_max, kappa)`` with kappa = max|theta| / min|theta|;
    NaNs when no Lanczos step is available.
    """
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)[: max(len(diag) - 1, 0)]
    if len(diag) == 0:
        return float("nan"), float("nan"), float("nan")
    theta = eigh_tridiagonal(diag, off, eigvals_only=True)
    a = np.abs(theta)
    kappa = float(a.max() / a.min()) if a.min() > 0 else float("inf")
    return float(theta.min()), float(theta.max()), kappa


def pcg(op, prec, b, tol=1e-8, maxit=500, x0=None, criterion="l2"):
    """Preconditioned conjugate gradients from ``x0`` (default zero).

    ``criterion`` is ``"l2"`` (||r|| / ||b||) or ``"prec"`` (preconditioned
    residual norm relative to the preconditioned right-hand side).
    """
    t0 = time.perf_counter()
    A, M = _as_callable(op), _as_callable(prec)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A(x) if x0 is not None else b.copy()
    z = M(r)
    rz = float(r @ z)
    if criterion == "l2":
        ref = float(np.linalg.norm(b))
        res = lambda r, rz: float(np.linalg.norm(r))
    elif criterion == "prec":
        ref = float(np.sqrt(abs(b @ M(b)))) if x0 is not None else float(np.sqrt(abs(rz)))
        res = lambda r, rz: float(np.sqrt(abs(rz)))
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    rep = SolveReport()
    if ref == 0.0:
        rep.converged = True
        rep.residual_history = [0.0]
        rep.wall_time = time.perf_counter() - t0
        return np.zeros_like(b), rep
    rep.residual_history.append(res(r, rz) / ref)
    alphas, betas = [], []
    p = z.copy()
    for it in range(1, maxit + 1):
        q = A(p)
        pq = float(p @ q)
        if pq <= 0.0 or rz <= 0.0:
            rep.iterations = it - 1
            raise SolverError("PCG breakdown: operator or preconditioner not SPD", rep)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = M(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        alphas.append(alpha)
        betas.append(beta)
        rz = rz_new
        rep.residual_history.append(res(r, rz) / ref)
        if rep.residual_history[-1] <= tol:
            rep.converged = True
            rep.iterations = it
            break
        p = z + beta * p
    else:
        rep.iterations = maxit
    diag, off = cg_lanczos_tridiagonal(alphas, betas)
    rep.eig_min, rep.eig_max, rep.kappa = lanczos_condition_estimate(diag, off)
    rep.wall_time = time.perf_counter() - t0
    if not rep.converged:
        raise SolverError(f"PCG did not converge in {maxit} iterations", rep)
    return x, rep


def cg_lanczos_tridiagonal(alphas, betas):
    """Lanczos tridiagonal matrix implied by CG step lengths."""
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    n = len(alphas)
    diag = 1.0 / alphas
    diag[1:] += betas[: n - 1] / alphas[: n - 1]
    off = np.sqrt(betas[: n - 1]) / alphas[: n - 1]
    return diag, off


def minres(op, prec, b, tol=1e-8, maxit=5000):
    """Preconditioned MINRES from a zero initial guess.

    ``prec`` must be symmetric positive definite. Stops when the
    preconditioned residual norm relative to the preconditioned right-hand
    side drops below ``tol``.
    """
    t0 = time.perf_counter()
    A, M = _as_callable(op), _as_callable(prec)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n)
    rep = SolveReport()
    r1 = b.copy()
    y = M(r1)
    b1sq = float(r1 @ y)
    if b1sq < 0:
        raise SolverError("MINRES: preconditioner is not positive definite", rep)
    beta1 = np.sqrt(b1sq)
    if beta1 == 0.0:
        rep.converged = True
        rep.residual_history = [0.0]
        return x, rep
    eps = np.finfo(float).eps
    oldb, beta, dbar, epsln, phibar = 0.0, beta1, 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1
    alphas, offs = [], []
    rep.residual_history.append(1.0)
    for it in range(1, maxit + 1):
        v = y / beta
        y = A(v)
        if it >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = M(r2)
        oldb = beta
        bsq = float(r2 @ y)
        if bsq < 0:
            rep.iterations = it
            raise SolverError("MINRES: preconditioner is not positive definite", rep)
        beta = np.sqrt(bsq)
        alphas.append(alfa)
        offs.append(beta)
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar
        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        rep.residual_history.append(phibar / beta1)
        if phibar / beta1 <= tol:
            rep.converged = True
            rep.iterations = it
            break
        if beta <= eps * beta1:
            # invariant Krylov subspace reached; x is the exact minimizer
            rep.iterations = it
            rep.converged = True
            break
    else:
        rep.iterations = maxit
    rep.eig_min, rep.eig_max, rep.kappa = lanczos_condition_estimate(alphas, offs)
    rep.wall_time = time.perf_counter() - t0
    if not rep.converged:
        raise SolverError(f"MINRES did not converge in {maxit} iterations", rep)
    return x, rep
