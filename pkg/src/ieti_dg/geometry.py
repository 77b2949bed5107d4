"""Patch geometry maps, multi-patch topology and the domain generators."""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from .splines import (CORNER_POS, CORNER_SIDES, CORNERS, SIDES, KnotVector,
                      TensorBasis, collocation, gauss_rule,
                      make_open_knot_vector)


class GeometryError(ValueError):
    """Singular or otherwise invalid geometry map."""

    def __init__(self, msg, xi=None):
        super().__init__(msg if xi is None else f"{msg} at xi={np.asarray(xi).tolist()}")
        self.xi = xi


class TopologyError(ValueError):
    """Patch configuration violating the conforming-vertex assumption."""


def side_points(side, s):
    """Parameter points on ``side`` for side coordinates ``s``."""
    s = np.asarray(s, dtype=float)
    z, o = np.zeros_like(s), np.ones_like(s)
    return {
        "west": np.stack([z, s], -1),
        "east": np.stack([o, s], -1),
        "south": np.stack([s, z], -1),
        "north": np.stack([s, o], -1),
    }[side]


class GeometryMap:
    """Tensor-product B-spline map from the unit square to one patch.

    ``control_points`` has shape (n_dofs, 2) in the dof order of ``basis``.
    """

    def __init__(self, basis, control_points, check=True):
        cp = np.asarray(control_points, dtype=float)
        if basis.dirichlet:
            raise ValueError("geometry basis must not have Dirichlet reduction")
        if cp.shape != (basis.n_dofs, 2):
            raise ValueError(f"expected {basis.n_dofs} control points")
        self.basis = basis
        self.control_points = cp
        if check:
            self._check_jacobian()

    @property
    def H(self):
        """Patch diameter proxy: diagonal of the control-point bounding box."""
        ext = self.control_points.max(0) - self.control_points.min(0)
        return float(np.hypot(*ext))

    def evaluate(self, xi):
        """Points, Jacobians (m, 2, 2) and determinants at parameters ``xi``."""
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        V, D1, D2 = self.basis.point_collocation(xi)
        return self._finish(V, D1, D2)

    def evaluate_grid(self, x1, x2):
        """Same as :meth:`evaluate` on the tensor grid x1 x x2 (x2 fastest)."""
        V, D1, D2 = self.basis.tensor_collocation(x1, x2)
        return self._finish(V, D1, D2)

    def _finish(self, V, D1, D2):
        cp = self.control_points
        x = V @ cp
        J = np.stack([D1 @ cp, D2 @ cp], axis=-1)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        return x, J, det

    def _check_jacobian(self):
        for kv in self.basis.kv:
            if kv.p < 1:
                raise ValueError("degree must be >= 1")
        x1, _ = gauss_rule(self.basis.kv1.breaks, self.basis.kv1.p + 2)
        x2, _ = gauss_rule(self.basis.kv2.breaks, self.basis.kv2.p + 2)
        x1 = np.concatenate([[0.0], x1, [1.0]])
        x2 = np.concatenate([[0.0], x2, [1.0]])
        _, J, det = self.evaluate_grid(x1, x2)
        scale = max(self.H, 1e-300) ** 2
        bad = np.abs(det) <= 1e-12 * scale
        if np.any(bad):
            q = int(np.argmax(bad))
            raise GeometryError("singular Jacobian",
                                xi=(x1[q // len(x2)], x2[q % len(x2)]))
        signs = np.sign(det)
        if np.any(signs != signs[0]):
            raise GeometryError("Jacobian changes sign")

    def side_curve(self, side, s):
        return self.evaluate(side_points(side, s))[0]

    def corner_point(self, corner):
        return self.evaluate([CORNER_POS[corner]])[0][0]

    def regularity_constants(self, nq=4):
        """Measured sup|grad G|/H and sup|grad G^-1|*H on a fine sample."""
        x1, _ = gauss_rule(self.basis.kv1.breaks, nq)
        x2, _ = gauss_rule(self.basis.kv2.breaks, nq)
        x1 = np.concatenate([[0.0], x1, [1.0]])
        x2 = np.concatenate([[0.0], x2, [1.0]])
        _, J, _ = self.evaluate_grid(x1, x2)
        sv = np.linalg.svd(J, compute_uv=False)
        H = self.H
        return float(sv[:, 0].max() / H), float((1.0 / sv[:, 1]).max() * H)


def eval_geometry(gmap, xi):
    """Physical point, Jacobian and determinant at a single parameter point."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0) or np.any(xi > 1):
        raise ValueError("parameter point outside [0, 1]^2")
    x, J, det = gmap.evaluate(xi[None, :])
    if abs(det[0]) <= 1e-14 * gmap.H ** 2:
        raise GeometryError("singular Jacobian", xi=xi)
    return x[0], J[0], float(det[0])


def interpolate_map(fn, degree=2, n_elements=1):
    """Greville interpolant of a parametrization ``fn(xi1, xi2) -> (x, y)``."""
    kv = make_open_knot_vector(degree, n_elements)
    basis = TensorBasis(kv, kv)
    g = kv.greville()
    A = collocation(kv, g)[0].toarray()
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    F = np.stack(fn(X1, X2), axis=-1)
    lu = scipy.linalg.lu_factor(A)
    C = np.empty_like(F)
    for c in range(2):
        tmp = scipy.linalg.lu_solve(lu, F[:, :, c])
        C[:, :, c] = scipy.linalg.lu_solve(lu, tmp.T).T
    return GeometryMap(basis, C.reshape(-1, 2))


def patch_sizes(gmap, basis):
    """Return (H_k, hat h_k, h_k) for a patch map and its discretization."""
    H = gmap.H
    hh = basis.mesh_size
    return H, hh, hh * H


@dataclass(frozen=True)
class Interface:
    k: int
    l: int
    side_k: str
    side_l: str
    same_orientation: bool

    def flipped(self):
        return Interface(self.l, self.k, self.side_l, self.side_k, self.same_orientation)

    def map_param(self, s):
        """Side coordinate on patch l for side coordinate ``s`` on patch k."""
        return s if self.same_orientation else 1.0 - s


@dataclass
class CornerPoint:
    point: np.ndarray
    incidences: list
    dirichlet: bool = False


@dataclass
class PatchTopology:
    n_patches: int
    interfaces: list
    corners: list
    dirichlet: list
    _by_side: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for itf in self.interfaces:
            self._by_side[(itf.k, itf.side_k)] = itf
            self._by_side[(itf.l, itf.side_l)] = itf.flipped()

    @property
    def K(self):
        return self.n_patches

    def neighbors(self, k):
        """N_Gamma(k): patches sharing an edge with k, ascending."""
        return sorted({itf.l for (kk, _), itf in self._by_side.items() if kk == k})

    def interfaces_of(self, k):
        """Interfaces seen from patch k (k is always the first patch), by side."""
        return [self._by_side[(k, s)] for s in SIDES if (k, s) in self._by_side]

    def interface(self, k, l):
        for itf in self.interfaces_of(k):
            if itf.l == l:
                return itf
        raise KeyError((k, l))

    def side_interface(self, k, side):
        return self._by_side.get((k, side))


def _match_sides(ca, cb, tol):
    if np.abs(ca - cb).max() <= tol:
        return True
    if np.abs(ca - cb[::-1]).max() <= tol:
        return False
    return None


def build_topology(maps, rel_tol=1e-10, n_samples=50):
    """Detect interfaces, Dirichlet sides and corner points from geometry."""
    K = len(maps)
    Hs = np.array([m.H for m in maps])
    tol = rel_tol * Hs.max()
    s = np.linspace(0.0, 1.0, n_samples)
    curves = {(k, side): maps[k].side_curve(side, s) for k in range(K) for side in SIDES}

    interfaces = []
    matched = set()
    for k in range(K):
        for side in SIDES:
            if (k, side) in matched:
                continue
            for l in range(k + 1, K):
                for side_l in SIDES:
                    if (l, side_l) in matched:
                        continue
                    orient = _match_sides(curves[(k, side)], curves[(l, side_l)], tol)
                    if orient is not None:
                        interfaces.append(Interface(k, l, side, side_l, orient))
                        matched.add((k, side))
                        matched.add((l, side_l))
                        break
                if (k, side) in matched:
                    break
    dirichlet = [tuple(sd for sd in SIDES if (k, sd) not in matched) for k in range(K)]

    _check_vertex_conformity(maps, curves, s, tol)

    # cluster patch corners into physical corner points
    corners = []
    for k in range(K):
        for c in CORNERS:
            x = maps[k].corner_point(c)
            for cp in corners:
                if np.linalg.norm(cp.point - x) <= tol:
                    cp.incidences.append((k, c))
                    break
            else:
                corners.append(CornerPoint(x, [(k, c)]))
    for cp in corners:
        cp.dirichlet = any(sd in dirichlet[k] for k, c in cp.incidences
                           for sd in CORNER_SIDES[c])
    return PatchTopology(K, interfaces, corners, dirichlet)


def _check_vertex_conformity(maps, curves, s, tol):
    """Reject configurations where a patch vertex lies inside another patch's edge."""
    K = len(maps)
    fine = np.linspace(0.0, 1.0, 401)
    keys = [(l, side) for l in range(K) for side in SIDES]
    dense = np.stack([maps[l].side_curve(side, fine) for l, side in keys])
    Hmax = max(m.H for m in maps)
    for k in range(K):
        for c in CORNERS:
            x = maps[k].corner_point(c)
            d = np.linalg.norm(dense - x, axis=2)
            for q in np.flatnonzero(d.min(axis=1) <= 1e-2 * Hmax):
                l, side = keys[q]
                if l == k:
                    continue
                # coincidence with an endpoint is a shared vertex
                if min(d[q, 0], d[q, -1]) <= 1e3 * tol:
                    continue
                i = int(np.argmin(d[q]))
                lo, hi = fine[max(i - 1, 0)], fine[min(i + 1, len(fine) - 1)]
                res = minimize_scalar(
                    lambda t: np.linalg.norm(maps[l].side_curve(side, [t])[0] - x),
                    bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
                if res.fun <= 1e3 * tol:
                    raise TopologyError(
                        f"vertex {c} of patch {k} lies inside side {side} of patch {l}")


class MultiPatch:
    """Geometry maps plus their topology."""

    def __init__(self, maps, topology=None, grid=None):
        self.maps = list(maps)
        self.topology = build_topology(self.maps) if topology is None else topology
        # (i, j) grid slot of every patch for generated layouts
        self.grid = grid

    @property
    def K(self):
        return len(self.maps)

    def to_json(self):
        patches = []
        for m in self.maps:
            patches.append({
                "degree": [m.basis.kv1.p, m.basis.kv2.p],
                "knots": [m.basis.kv1.knots.tolist(), m.basis.kv2.knots.tolist()],
                "control_points": m.control_points.tolist(),
            })
        return json.dumps({"patches": patches}, indent=1)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        maps = []
        for pd in data["patches"]:
            kv1 = KnotVector(pd["knots"][0], pd["degree"][0])
            kv2 = KnotVector(pd["knots"][1], pd["degree"][1])
            maps.append(GeometryMap(TensorBasis(kv1, kv2), pd["control_points"]))
        return cls(maps)


def quarter_annulus_multipatch(n_angular, n_radial, r_inner=1.0, r_outer=2.0):
    """Quarter annulus split into a n_angular x n_radial grid of degree-2 patches.

    Patch index is ``j * n_angular + i`` for angular slot i and radial slot j.
    """
    if n_angular < 1 or n_radial < 1:
        raise ValueError("need at least one patch per direction")
    if not 0 < r_inner < r_outer:
        raise ValueError("radii must satisfy 0 < r_inner < r_outer")
    maps = []
    for j in range(n_radial):
        for i in range(n_angular):
            def fn(a, b, i=i, j=j):
                th = 0.5 * np.pi * (i + a) / n_angular
                rho = r_inner + (r_outer - r_inner) * (j + b) / n_radial
                return rho * np.cos(th), rho * np.sin(th)
            maps.append(interpolate_map(fn))
    grid = [(i, j) for j in range(n_radial) for i in range(n_angular)]
    return MultiPatch(maps, grid=grid)


def unit_square_multipatch(nx, ny):
    """Unit square split into nx x ny axis-parallel patches, index ``j*nx + i``."""
    if nx < 1 or ny < 1:
        raise ValueError("need at least one patch per direction")
    maps = []
    for j in range(ny):
        for i in range(nx):
            def fn(a, b, i=i, j=j):
                return (i + a) / nx, (j + b) / ny
            maps.append(interpolate_map(fn))
    grid = [(i, j) for j in range(ny) for i in range(nx)]
    return MultiPatch(maps, grid=grid)


def parse_layout(spec):
    """Build a MultiPatch from ``annulus:8x4``, ``square:2x2`` or ``json:PATH``."""
    kind, _, arg = spec.partition(":")
    if kind == "json":
        with open(arg) as fh:
            return MultiPatch.from_json(fh.read())
    try:
        a, b = (int(v) for v in arg.lower().split("x"))
    except ValueError:
        raise ValueError(f"bad layout {spec!r}") from None
    if kind == "annulus":
        return quarter_annulus_multipatch(a, b)
    if kind == "square":
        return unit_square_multipatch(a, b)
    raise ValueError(f"unknown layout kind {kind!r}")
