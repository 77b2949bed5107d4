"""Experiment runner: problem setup, solver variants, errors and reports."""

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.optimize import least_squares

from .assembly import (assemble_local, assemble_parameter_matrices, discretize,
                       evaluate_patch, side_values)
from .fastdiag import LocalPreconditioner
from .geometry import parse_layout
from .ieti import VARIANTS, classify_dofs, solve_ieti
from .krylov import SolverError, pcg
from .splines import gauss_rule

CSV_COLUMNS = ("variant", "p", "r", "N_total", "it", "kappa_est", "t_psi",
               "t_setup_local", "t_setup_dirichlet", "t_apply_local",
               "t_apply_dirichlet", "t_solve", "t_total", "l2_err", "dg_err")


def exact_solution(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def exact_gradient(x, y):
    return np.pi * np.stack([np.cos(np.pi * x) * np.sin(np.pi * y),
                             np.sin(np.pi * x) * np.cos(np.pi * y)], axis=1)


def source(x, y):
    return 2.0 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


@dataclass
class ExperimentConfig:
    p: int = 2
    r: int = 2
    layout: str = "square:2x2"
    variant: str = "mfd"
    eps: float = 1e-8
    eps_c: float = None          # None: eps / 100
    delta: float = None          # None: 2 (p_max + 1)^2
    mixed_degree: bool = False
    mixed_refine: bool = False
    nu: int = 2
    maxit: int = 5000
    jobs: int = 1

    def __post_init__(self):
        self.variant = self.variant.lower().replace("-", "")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.r < 0 or self.p < 1:
            raise ValueError("need p >= 1 and r >= 0")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class ExperimentRecord:
    variant: str
    p: int
    r: int
    N_total: int
    it: int
    kappa_est: float
    t_psi: float
    t_setup_local: float
    t_setup_dirichlet: float
    t_apply_local: float
    t_apply_dirichlet: float
    t_solve: float
    t_total: float
    l2_err: float
    dg_err: float
    layout: str = ""
    converged: bool = True
    residual_history: list = field(default_factory=list)


def patch_colours(mp):
    """Colour of every patch: ``red`` (degree p+1), ``grey`` (extra level) or ``green``.

    Grid layouts use the slot (i, j): red when i+j is odd, grey when i+j is
    even and i is even, green otherwise. Layouts without a grid fall back to
    the patch index as i with j = 0.
    """
    grid = mp.grid or [(k, 0) for k in range(mp.K)]
    out = []
    for i, j in grid:
        if (i + j) % 2 == 1:
            out.append("red")
        elif i % 2 == 0:
            out.append("grey")
        else:
            out.append("green")
    return out


def patch_discretization(mp, cfg):
    """Per-patch degrees and refinement levels for a configuration."""
    colours = patch_colours(mp)
    degrees = [cfg.p + 1 if cfg.mixed_degree and c == "red" else cfg.p for c in colours]
    levels = [cfg.r + 1 if cfg.mixed_refine and c == "grey" else cfg.r for c in colours]
    return degrees, levels


def discretization_errors(disc, coeffs):
    """L2 and dG-norm errors against sin(pi x) sin(pi y)."""
    l2 = a = 0.0
    for k, c in enumerate(coeffs):
        b = disc.bases[k]
        x1, w1 = gauss_rule(b.kv1.breaks, b.kv1.p + 3)
        x2, w2 = gauss_rule(b.kv2.breaks, b.kv2.p + 3)
        x, u, g, det = evaluate_patch(disc, k, c, x1, x2)
        w = np.outer(w1, w2).ravel() * det
        l2 += float(w @ (u - exact_solution(x[:, 0], x[:, 1])) ** 2)
        a += float(w @ np.sum((g - exact_gradient(x[:, 0], x[:, 1])) ** 2, axis=1))
    jump = 0.0
    cfg = disc.config
    for itf in disc.mp.topology.interfaces:
        q = disc.quad(itf.k, itf.l)
        uk = side_values(disc, itf.k, itf.side_k, coeffs[itf.k], q.s)
        ul = side_values(disc, itf.l, itf.side_l, coeffs[itf.l], q.t)
        # the penalty term appears once from each side of the interface
        jump += 2.0 * cfg.delta / cfg.h_kl(itf.k, itf.l) * float((q.w * q.ds) @ (uk - ul) ** 2)
    return math.sqrt(l2), math.sqrt(a + jump)


def _has_exact_solution(layout):
    return layout.split(":")[0] == "square"


def run_experiment(cfg):
    """Build, solve and measure one configuration; returns an ExperimentRecord.

    Raises :class:`SolverError` (with the partial report) on solver failure.
    """
    t0 = time.perf_counter()
    mp = parse_layout(cfg.layout)
    degrees, levels = patch_discretization(mp, cfg)
    disc = discretize(mp, degrees, levels, cfg.delta)
    res = solve_ieti(disc, source, cfg.variant, cfg.eps, cfg.eps_c, cfg.nu, cfg.maxit,
                     cfg.jobs)
    t_total = time.perf_counter() - t0
    if _has_exact_solution(cfg.layout):
        l2, dg = discretization_errors(disc, res.coefficients)
    else:
        l2 = dg = float("nan")
    tm = res.timings
    return ExperimentRecord(
        variant=cfg.variant, p=cfg.p, r=cfg.r,
        N_total=int(sum(b.n_dofs for b in disc.bases)),
        it=res.report.iterations, kappa_est=res.report.kappa,
        t_psi=tm["t_psi"], t_setup_local=tm["t_setup_local"],
        t_setup_dirichlet=tm["t_setup_dirichlet"], t_apply_local=tm["t_apply_local"],
        t_apply_dirichlet=tm["t_apply_dirichlet"], t_solve=tm["t_solve"],
        t_total=t_total, l2_err=l2, dg_err=dg, layout=cfg.layout,
        converged=res.report.converged,
        residual_history=[float(v) for v in res.report.residual_history])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(records, fmt="csv"):
    """Render records as ``csv``, ``json`` or a markdown table."""
    if not records:
        raise ValueError("need at least one record")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            w.writerow([_fmt(getattr(rec, c)) for c in CSV_COLUMNS])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps([asdict(r) for r in records], indent=1)
    if fmt == "md":
        head = ("| variant | r | N | Psi | setup local | setup Dirichlet | apply local "
                "| apply Dirichlet | solving | total | it. | kappa |")
        lines = [head, "|" + "---|" * 12]
        for rec in sorted(records, key=lambda x: (x.r, VARIANTS.index(x.variant))):
            lines.append(
                f"| {rec.variant.upper()} | {rec.r} | {rec.N_total} | {rec.t_psi:.3g} "
                f"| {rec.t_setup_local:.3g} | {rec.t_setup_dirichlet:.3g} "
                f"| {rec.t_apply_local:.3g} | {rec.t_apply_dirichlet:.3g} "
                f"| {rec.t_solve:.3g} | {rec.t_total:.3g} | {rec.it} | {rec.kappa_est:.3g} |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(text):
    """Inverse of ``emit_report(..., "json")``."""
    names = {f.name for f in fields(ExperimentRecord)}
    return [ExperimentRecord(**{k: v for k, v in d.items() if k in names})
            for d in json.loads(text)]


@dataclass
class ScalingFit:
    """Fit of kappa(r) ~ c (1 + c0 log(H/h))^2 over refinement levels."""

    p: int
    variant: str
    levels: list
    log_Hh: list
    kappas: list
    iterations: list
    c: float = float("nan")
    c0: float = float("nan")
    max_rel_dev: float = float("nan")
    ratio_ok: bool = False
    failures: list = field(default_factory=list)

    def predicted(self, L):
        return self.c * (1.0 + self.c0 * np.asarray(L)) ** 2


def fit_log_squared(log_Hh, kappas):
    """Least-squares fit of c (1 + c0 L)^2 in relative deviation; returns (c, c0, dev)."""
    L = np.asarray(log_Hh, dtype=float)
    k = np.asarray(kappas, dtype=float)
    # linear start: sqrt(kappa) = a + b L
    b, a = np.polyfit(L, np.sqrt(k), 1)
    a = max(a, 1e-3)
    x0 = [a * a, max(b / a, 0.0)]

    def resid(x):
        return x[0] * (1.0 + x[1] * L) ** 2 / k - 1.0

    sol = least_squares(resid, x0, bounds=([1e-12, 0.0], [np.inf, np.inf]))
    c, c0 = sol.x
    return float(c), float(c0), float(np.abs(resid(sol.x)).max())


def scaling_study(p, r_range, variant="mfd", layout="square:2x2", eps=1e-8, **kw):
    """Run the refinement sweep and fit the condition numbers."""
    r_range = list(r_range)
    if len(r_range) < 3:
        raise ValueError("need at least three refinement levels")
    fit = ScalingFit(p, variant, [], [], [], [])
    records = []
    for r in r_range:
        cfg = ExperimentConfig(p=p, r=r, layout=layout, variant=variant, eps=eps, **kw)
        try:
            rec = run_experiment(cfg)
        except SolverError as exc:
            fit.failures.append((r, str(exc)))
            continue
        records.append(rec)
        mp = parse_layout(layout)
        _, levels = patch_discretization(mp, cfg)
        fit.levels.append(r)
        fit.log_Hh.append(float(max(levels)) * math.log(2.0))
        fit.kappas.append(rec.kappa_est)
        fit.iterations.append(rec.it)
    if len(fit.kappas) >= 2:
        fit.c, fit.c0, fit.max_rel_dev = fit_log_squared(fit.log_Hh, fit.kappas)
        ok = True
        for i in range(len(fit.kappas) - 1):
            bound = ((1 + fit.c0 * fit.log_Hh[i + 1]) / (1 + fit.c0 * fit.log_Hh[i])) ** 2
            ok &= fit.kappas[i + 1] / fit.kappas[i] <= bound * 1.1
        fit.ratio_ok = bool(ok)
    return fit, records


def local_condition(p, r, layout="annulus:8x4", patch=18, mixed=True, delta=None, seed=0,
                    tol=1e-10):
    """PCG estimate of kappa(P A_DD) on one patch (random fixed-seed right-hand side).

    The default patch is an interior grey patch touching green patches at its
    vertices; with ``mixed`` the colour scheme makes its interfaces non-matching.
    """
    mp = parse_layout(layout)
    cfg = ExperimentConfig(p=p, r=r, layout=layout, delta=delta,
                           mixed_degree=mixed, mixed_refine=mixed)
    degrees, levels = patch_discretization(mp, cfg)
    disc = discretize(mp, degrees, levels, delta)
    ls = assemble_local(disc, patch)
    cls = classify_dofs(disc, patch)
    pm = assemble_parameter_matrices(disc, patch)
    npatch = disc.spaces[patch].n_patch
    P = LocalPreconditioner(pm, disc.spaces[patch], cls.C[cls.C < npatch], cls.trace_delta)
    d = cls.delta
    A = ls.A.tocsr()[d][:, d]
    b = np.random.default_rng(seed).standard_normal(len(d))
    _, rep = pcg(A, P, b, tol, maxit=2000)
    return rep
