"""Univariate and tensor-product B-spline bases."""

import numpy as np
import scipy.sparse as sp

SIDES = ("west", "east", "south", "north")
CORNERS = ("sw", "se", "nw", "ne")

# side -> (normal direction, position 0/1); directions are 0 (xi_1) and 1 (xi_2)
SIDE_INFO = {
    "west": (0, 0),
    "east": (0, 1),
    "south": (1, 0),
    "north": (1, 1),
}
CORNER_POS = {"sw": (0, 0), "se": (1, 0), "nw": (0, 1), "ne": (1, 1)}
CORNER_SIDES = {
    "sw": ("west", "south"),
    "se": ("east", "south"),
    "nw": ("west", "north"),
    "ne": ("east", "north"),
}


class KnotVector:
    """A p-open knot vector on [0, 1] together with its degree.

    >>> kv = KnotVector([0, 0, 0.5, 1, 1], 1)
    >>> kv.n
    3
    """

    def __init__(self, knots, p):
        knots = np.array(knots, dtype=float)
        p = int(p)
        if p < 1:
            raise ValueError("degree must be >= 1")
        if knots.ndim != 1 or np.any(np.diff(knots) < 0):
            raise ValueError("knots must be a nondecreasing sequence")
        if not (np.all(knots[: p + 1] == 0.0) and np.all(knots[-(p + 1):] == 1.0)):
            raise ValueError("knot vector is not p-open on [0, 1]")
        if len(knots) - p - 1 < p + 1:
            raise ValueError("need at least p+1 basis functions")
        knots.setflags(write=False)
        self.knots = knots
        self.p = p

    @property
    def n(self):
        return len(self.knots) - self.p - 1

    @property
    def breaks(self):
        """Distinct knot values (element boundaries)."""
        return np.unique(self.knots)

    @property
    def spans(self):
        return np.diff(self.breaks)

    @property
    def mesh_size(self):
        return float(self.spans.max())

    @property
    def quasi_uniformity(self):
        """Ratio of largest to smallest nonzero span width."""
        s = self.spans
        return float(s.max() / s.min())

    def interior_multiplicity(self):
        b = self.breaks[1:-1]
        if len(b) == 0:
            return None
        return int(max(np.count_nonzero(self.knots == x) for x in b))

    def greville(self):
        p = self.p
        return np.array([self.knots[i + 1: i + p + 1].mean() for i in range(self.n)])

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.p == other.p
                and np.array_equal(self.knots, other.knots))

    def __hash__(self):
        return hash((self.p, self.knots.tobytes()))

    def __repr__(self):
        return f"KnotVector(p={self.p}, knots={self.knots.tolist()})"


def make_open_knot_vector(p, n_elements, regularity=None):
    """Uniform p-open knot vector; ``regularity`` defaults to p-1."""
    if regularity is None:
        regularity = p - 1
    if p < 1 or n_elements < 1:
        raise ValueError("need p >= 1 and n_elements >= 1")
    if not 0 <= regularity <= p - 1:
        raise ValueError(f"regularity must lie in [0, {p - 1}], got {regularity}")
    mult = p - regularity
    inner = np.repeat(np.arange(1, n_elements) / n_elements, mult)
    knots = np.concatenate([np.zeros(p + 1), inner, np.ones(p + 1)])
    return KnotVector(knots, p)


def refine_dyadic(kv, levels):
    """Bisect every nonzero span ``levels`` times, keeping degree and smoothness."""
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if levels == 0:
        return kv
    mult = kv.interior_multiplicity() or 1
    knots = kv.knots
    for _ in range(levels):
        b = np.unique(knots)
        mids = 0.5 * (b[:-1] + b[1:])
        knots = np.sort(np.concatenate([knots, np.repeat(mids, mult)]))
    return KnotVector(knots, kv.p)


def find_spans(kv, x):
    """Knot-span index s with knots[s] <= x < knots[s+1] (last span closed)."""
    t = kv.knots
    s = np.searchsorted(t, x, side="right") - 1
    return np.clip(s, kv.p, kv.n - 1)


def _eval_local(kv, x):
    """Values and first derivatives of the p+1 active functions at points x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("evaluation point outside [0, 1]")
    p, t = kv.p, kv.knots
    s = find_spans(kv, x)
    npts = len(x)
    N = np.zeros((p + 1, npts))
    N[0] = 1.0
    left = np.zeros((p + 1, npts))
    right = np.zeros((p + 1, npts))
    low = None
    for j in range(1, p + 1):
        if j == p:
            low = N[:p].copy()
        left[j] = x - t[s + 1 - j]
        right[j] = t[s + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            tmp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        N[j] = saved
    D = np.zeros((p + 1, npts))
    for a in range(p + 1):
        if a >= 1:
            D[a] += p * low[a - 1] / (t[s + a] - t[s - p + a])
        if a <= p - 1:
            D[a] -= p * low[a] / (t[s + a + 1] - t[s - p + a + 1])
    return s - p, N.T, D.T


def eval_basis(kv, x):
    """Evaluate the B-splines supported at a single point ``x``.

    Returns ``(first, values, derivatives)``: the index of the first active
    function and the p+1 values and first derivatives.
    """
    first, N, D = _eval_local(kv, [x])
    return int(first[0]), N[0], D[0]


def collocation(kv, x):
    """Sparse matrices of basis values and derivatives, shape (len(x), n)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    first, N, D = _eval_local(kv, x)
    p = kv.p
    rows = np.repeat(np.arange(len(x)), p + 1)
    cols = (first[:, None] + np.arange(p + 1)[None, :]).ravel()
    shape = (len(x), kv.n)
    B = sp.csr_matrix((N.ravel(), (rows, cols)), shape=shape)
    dB = sp.csr_matrix((D.ravel(), (rows, cols)), shape=shape)
    return B, dB


def gauss_rule(breaks, nq):
    """Gauss-Legendre points and weights with nq nodes per cell of ``breaks``."""
    xg, wg = np.polynomial.legendre.leggauss(nq)
    a = np.asarray(breaks[:-1])[:, None]
    h = np.diff(breaks)[:, None]
    pts = a + 0.5 * h * (xg[None, :] + 1.0)
    wts = 0.5 * h * wg[None, :]
    return pts.ravel(), wts.ravel()


def quadrature(kv, nq=None):
    """Per-span Gauss rule; p+1 points unless overridden."""
    return gauss_rule(kv.breaks, kv.p + 1 if nq is None else nq)


def univariate_matrices(kv, nq=None):
    """Dense mass and stiffness matrices of the univariate basis."""
    x, w = quadrature(kv, nq)
    B, dB = collocation(kv, x)
    W = sp.diags(w)
    M = (B.T @ W @ B).toarray()
    K = (dB.T @ W @ dB).toarray()
    return 0.5 * (M + M.T), 0.5 * (K + K.T)


class TensorBasis:
    """Tensor-product B-spline space with homogeneous Dirichlet sides removed.

    Dofs are numbered lexicographically over the surviving univariate indices
    with the second direction running fastest.
    """

    def __init__(self, kv1, kv2, dirichlet=()):
        dirichlet = frozenset(dirichlet)
        if not dirichlet <= set(SIDES):
            raise ValueError(f"unknown sides in {sorted(dirichlet)}")
        self.kv = (kv1, kv2)
        self.dirichlet = dirichlet
        self.active = []
        for d in range(2):
            n = self.kv[d].n
            lo = 1 if SIDES[2 * d] in dirichlet else 0
            hi = n - 1 if SIDES[2 * d + 1] in dirichlet else n
            self.active.append(np.arange(lo, hi))
        self.shape = (len(self.active[0]), len(self.active[1]))
        self._full_to_dof = -np.ones((kv1.n, kv2.n), dtype=int)
        ii, jj = np.meshgrid(self.active[0], self.active[1], indexing="ij")
        self._full_to_dof[ii, jj] = np.arange(self.n_dofs).reshape(self.shape)

    @property
    def kv1(self):
        return self.kv[0]

    @property
    def kv2(self):
        return self.kv[1]

    @property
    def n_dofs(self):
        return self.shape[0] * self.shape[1]

    @property
    def full_shape(self):
        return (self.kv[0].n, self.kv[1].n)

    @property
    def degree(self):
        return max(self.kv[0].p, self.kv[1].p)

    @property
    def mesh_size(self):
        return max(self.kv[0].mesh_size, self.kv[1].mesh_size)

    def active_index_map(self):
        """Array of shape (n_dofs, 2): tensor index (i, j) of every dof."""
        ii, jj = np.meshgrid(self.active[0], self.active[1], indexing="ij")
        return np.stack([ii.ravel(), jj.ravel()], axis=1)

    def dof(self, i, j):
        """Dof of tensor index (i, j), or -1 if removed."""
        return int(self._full_to_dof[i, j])

    def side_functions(self, side):
        """Dofs whose trace on ``side`` is nonzero, ordered along the side.

        Returns ``(dofs, tangential_indices)``.
        """
        nd, pos = SIDE_INFO[side]
        td = 1 - nd
        idx = 0 if pos == 0 else self.kv[nd].n - 1
        t = np.arange(self.kv[td].n)
        if nd == 0:
            dofs = self._full_to_dof[idx, t]
        else:
            dofs = self._full_to_dof[t, idx]
        keep = dofs >= 0
        return dofs[keep], t[keep]

    def corner_dof(self, corner):
        a, b = CORNER_POS[corner]
        i = 0 if a == 0 else self.kv[0].n - 1
        j = 0 if b == 0 else self.kv[1].n - 1
        return self.dof(i, j)

    def interior_mask(self):
        """True for dofs whose function vanishes on the whole patch boundary."""
        ij = self.active_index_map()
        n1, n2 = self.full_shape
        return ((ij[:, 0] > 0) & (ij[:, 0] < n1 - 1)
                & (ij[:, 1] > 0) & (ij[:, 1] < n2 - 1))

    def reduced_matrices(self, nq=None):
        """Univariate (M, K) pairs restricted to the active indices."""
        out = []
        for d in range(2):
            M, K = univariate_matrices(self.kv[d], nq)
            a = self.active[d]
            out.append((M[np.ix_(a, a)], K[np.ix_(a, a)]))
        return out

    def tensor_collocation(self, x1, x2):
        """Sparse (values, d/dxi1, d/dxi2) at the tensor grid x1 x x2.

        Rows are ordered with the x2 index running fastest.
        """
        B1, dB1 = collocation(self.kv[0], x1)
        B2, dB2 = collocation(self.kv[1], x2)
        B1, dB1 = B1[:, self.active[0]], dB1[:, self.active[0]]
        B2, dB2 = B2[:, self.active[1]], dB2[:, self.active[1]]
        return (sp.kron(B1, B2, format="csr"),
                sp.kron(dB1, B2, format="csr"),
                sp.kron(B1, dB2, format="csr"))

    def point_collocation(self, xi):
        """(values, d/dxi1, d/dxi2) at arbitrary points ``xi`` of shape (m, 2)."""
        xi = np.atleast_2d(xi)
        B1, dB1 = collocation(self.kv[0], xi[:, 0])
        B2, dB2 = collocation(self.kv[1], xi[:, 1])
        B1, dB1 = B1[:, self.active[0]].toarray(), dB1[:, self.active[0]].toarray()
        B2, dB2 = B2[:, self.active[1]].toarray(), dB2[:, self.active[1]].toarray()
        V = np.einsum("qi,qj->qij", B1, B2).reshape(len(xi), -1)
        D1 = np.einsum("qi,qj->qij", dB1, B2).reshape(len(xi), -1)
        D2 = np.einsum("qi,qj->qij", B1, dB2).reshape(len(xi), -1)
        return V, D1, D2
