"""Slow, independent reference assembly of the global SIPG system.

Works directly on V = V^(1) x ... x V^(K) (no extended spaces), evaluates
splines through :class:`scipy.interpolate.BSpline` and locates interface
points on the neighbouring patch by Newton inversion of its geometry map.
"""

import numpy as np
from scipy.interpolate import BSpline


class _Patch:
    def __init__(self, gmap, kv1, kv2, dirichlet):
        self.geo = [(gmap.basis.kv1.knots, gmap.basis.kv1.p),
                    (gmap.basis.kv2.knots, gmap.basis.kv2.p)]
        g1 = gmap.basis.kv1.n
        g2 = gmap.basis.kv2.n
        self.cp = gmap.control_points.reshape(g1, g2, 2)
        self.kv = [(kv1.knots, kv1.p), (kv2.knots, kv2.p)]
        self.n = [kv1.n, kv2.n]
        lo = [1 if "west" in dirichlet else 0, 1 if "south" in dirichlet else 0]
        hi = [kv1.n - (1 if "east" in dirichlet else 0), kv2.n - (1 if "north" in dirichlet else 0)]
        self.act = [np.arange(lo[0], hi[0]), np.arange(lo[1], hi[1])]
        self.ndof = len(self.act[0]) * len(self.act[1])

    @staticmethod
    def _uni(knots, p, n, x, der):
        spl = BSpline(knots, np.eye(n), p, extrapolate=False)
        if der:
            spl = spl.derivative()
        out = spl(np.clip(x, 0.0, 1.0))
        return np.nan_to_num(out)

    def basis(self, xi):
        """Values and parametric gradients of reduced basis at points (m, 2)."""
        (t1, p1), (t2, p2) = self.kv
        b1 = self._uni(t1, p1, self.n[0], xi[:, 0], 0)[:, self.act[0]]
        d1 = self._uni(t1, p1, self.n[0], xi[:, 0], 1)[:, self.act[0]]
        b2 = self._uni(t2, p2, self.n[1], xi[:, 1], 0)[:, self.act[1]]
        d2 = self._uni(t2, p2, self.n[1], xi[:, 1], 1)[:, self.act[1]]
        m = len(xi)
        V = np.einsum("qi,qj->qij", b1, b2).reshape(m, -1)
        G1 = np.einsum("qi,qj->qij", d1, b2).reshape(m, -1)
        G2 = np.einsum("qi,qj->qij", b1, d2).reshape(m, -1)
        return V, G1, G2

    def geometry(self, xi):
        (t1, p1), (t2, p2) = self.geo
        n1, n2 = self.cp.shape[:2]
        b1 = self._uni(t1, p1, n1, xi[:, 0], 0)
        d1 = self._uni(t1, p1, n1, xi[:, 0], 1)
        b2 = self._uni(t2, p2, n2, xi[:, 1], 0)
        d2 = self._uni(t2, p2, n2, xi[:, 1], 1)
        x = np.einsum("qi,qj,ijc->qc", b1, b2, self.cp)
        J1 = np.einsum("qi,qj,ijc->qc", d1, b2, self.cp)
        J2 = np.einsum("qi,qj,ijc->qc", b1, d2, self.cp)
        return x, np.stack([J1, J2], axis=-1)

    def invert(self, x, guess):
        xi = guess.copy()
        for _ in range(50):
            y, J = self.geometry(xi)
            step = np.linalg.solve(J, (x - y)[..., None])[..., 0]
            xi = np.clip(xi + step, 0.0, 1.0)
            if np.abs(step).max() < 1e-15:
                break
        return xi

    def breaks(self, d):
        return np.unique(self.kv[d][0])


def _gauss(breaks, nq):
    xg, wg = np.polynomial.legendre.leggauss(nq)
    pts, wts = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        pts.append(a + (b - a) * (xg + 1) / 2)
        wts.append((b - a) * wg / 2)
    return np.concatenate(pts), np.concatenate(wts)


_SIDE = {"west": (0, 0.0), "east": (0, 1.0), "south": (1, 0.0), "north": (1, 1.0)}


def _side_xi(side, s):
    nd, pos = _SIDE[side]
    xi = np.zeros((len(s), 2))
    xi[:, nd] = pos
    xi[:, 1 - nd] = s
    return xi


def global_system(disc, f=None):
    """Dense (A_h, D_h, load) on V ordered patch by patch.

    ``disc`` supplies the geometry, the knot vectors, the Dirichlet sides,
    the interface list and the penalty data; everything is re-evaluated here.
    """
    mp = disc.mp
    K = mp.K
    pats = [_Patch(mp.maps[k], disc.bases[k].kv1, disc.bases[k].kv2,
                   mp.topology.dirichlet[k]) for k in range(K)]
    offs = np.concatenate([[0], np.cumsum([p.ndof for p in pats])]).astype(int)
    N = offs[-1]
    A = np.zeros((N, N))
    D = np.zeros((N, N))
    F = np.zeros(N)
    cfg = disc.config
    for k, P in enumerate(pats):
        sl = slice(offs[k], offs[k + 1])
        nq = max(P.kv[0][1], P.kv[1][1]) + 1
        x1, w1 = _gauss(P.breaks(0), nq)
        x2, w2 = _gauss(P.breaks(1), nq)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        xi = np.stack([X1.ravel(), X2.ravel()], 1)
        w = np.outer(w1, w2).ravel()
        V, G1, G2 = P.basis(xi)
        x, J = P.geometry(xi)
        det = np.abs(np.linalg.det(J))
        Jit = np.linalg.inv(J).transpose(0, 2, 1)
        gx = Jit[:, 0, 0, None] * G1 + Jit[:, 0, 1, None] * G2
        gy = Jit[:, 1, 0, None] * G1 + Jit[:, 1, 1, None] * G2
        ww = (w * det)[:, None]
        Kk = gx.T @ (ww * gx) + gy.T @ (ww * gy)
        A[sl, sl] += Kk
        D[sl, sl] += Kk
        if f is not None:
            F[sl] += V.T @ (w * det * f(x[:, 0], x[:, 1]))

    for itf in mp.topology.interfaces:
        for k, l, side_k, side_l in ((itf.k, itf.l, itf.side_k, itf.side_l),
                                     (itf.l, itf.k, itf.side_l, itf.side_k)):
            Pk, Pl = pats[k], pats[l]
            nd_k = _SIDE[side_k][0]
            nd_l = _SIDE[side_l][0]
            # orientation from the end points of the physical edge
            e0, _ = Pk.geometry(_side_xi(side_k, np.array([0.0])))
            s0 = Pl.invert(e0, _side_xi(side_l, np.array([0.5])))[0, 1 - nd_l]
            same = s0 < 0.5
            bl = Pl.breaks(1 - nd_l)
            brk = np.unique(np.round(np.concatenate(
                [Pk.breaks(1 - nd_k), bl if same else 1.0 - bl]), 14))
            nq = max(Pk.kv[0][1], Pk.kv[1][1], Pl.kv[0][1], Pl.kv[1][1]) + 1
            s, w = _gauss(brk, nq)
            xik = _side_xi(side_k, s)
            xk, Jk = Pk.geometry(xik)
            guess = _side_xi(side_l, s if same else 1.0 - s)
            xil = Pl.invert(xk, guess)
            Vk, G1, G2 = Pk.basis(xik)
            Vl, _, _ = Pl.basis(xil)
            # outward normal and arc length
            tang = Jk[:, :, 1 - nd_k]
            ds = np.linalg.norm(tang, axis=1)
            nrm = np.stack([tang[:, 1], -tang[:, 0]], 1) / ds[:, None]
            mid, _ = Pk.geometry(np.array([[0.5, 0.5]]))
            if np.mean(np.sum((xk - mid) * nrm, axis=1)) < 0:
                nrm = -nrm
            Jit = np.linalg.inv(Jk).transpose(0, 2, 1)
            gx = Jit[:, 0, 0, None] * G1 + Jit[:, 0, 1, None] * G2
            gy = Jit[:, 1, 0, None] * G1 + Jit[:, 1, 1, None] * G2
            dn = nrm[:, 0, None] * gx + nrm[:, 1, None] * gy
            ww = (w * ds)[:, None]
            pen = cfg.delta / min(cfg.h[k], cfg.h[l])
            # jump operator v^(l) - v^(k) on the global vector
            Jmp = np.zeros((len(s), N))
            Jmp[:, offs[l]:offs[l + 1]] += Vl
            Jmp[:, offs[k]:offs[k + 1]] -= Vk
            Dn = np.zeros((len(s), N))
            Dn[:, offs[k]:offs[k + 1]] = dn
            m = 0.5 * (Dn.T @ (ww * Jmp))
            r = pen * (Jmp.T @ (ww * Jmp))
            A += m + m.T + r
            D += r
    return A, D, F
