"""Pure-numpy implementations of the hot kernels.

Mirrors the compiled extension ``v2sreg._kernels`` operation for operation;
selected at import time by :mod:`v2sreg.kernels` when the extension is not
available (or when ``V2S_PURE_PYTHON=1``).

Closest-point queries here do not traverse the BVH; they use a KD-tree over
triangle centroids with an expanding-ring certification bound, which
vectorizes well. Results are exact nearest distances either way.
"""

import numpy as np
from scipy.spatial import cKDTree

_CHUNK = 8192


def _closest_on_triangles(tri: np.ndarray, p: np.ndarray):
    """Closest point on each triangle to each query (paired batch).

    tri: (K, 3, 3), p: (K, 3) -> (dist2 (K,), point (K, 3)).
    Branch scalars are all even under coordinate mirroring, which keeps
    mirror symmetry exact in floating point.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    bc = c - b

    best_d2 = np.full(p.shape[0], np.inf)
    best_pt = np.zeros_like(p)

    def consider(pt):
        nonlocal best_d2, best_pt
        d = p - pt
        d2 = (d * d).sum(axis=1)
        better = d2 < best_d2
        best_d2 = np.where(better, d2, best_d2)
        best_pt = np.where(better[:, None], pt, best_pt)

    def seg_closest(o, e, q):
        # closest point on segment o..o+e to q, degenerate-safe
        t_num = ((q - o) * e).sum(axis=1)
        t_den = (e * e).sum(axis=1)
        t = np.where(t_den > 0.0, t_num / np.where(t_den > 0.0, t_den, 1.0), 0.0)
        t = np.clip(t, 0.0, 1.0)
        return o + t[:, None] * e

    consider(seg_closest(a, ab, p))
    consider(seg_closest(a, ac, p))
    consider(seg_closest(b, bc, p))

    # interior projection where barycentric coordinates are all nonnegative
    n = np.cross(ab, ac)
    nn = (n * n).sum(axis=1)
    ok = nn > 0.0
    nn_safe = np.where(ok, nn, 1.0)
    ap = p - a
    t = (ap * n).sum(axis=1) / nn_safe
    proj = p - t[:, None] * n
    # signed sub-areas against the face normal
    u = (np.cross(b - proj, c - proj) * n).sum(axis=1)
    v = (np.cross(c - proj, a - proj) * n).sum(axis=1)
    w = (np.cross(a - proj, b - proj) * n).sum(axis=1)
    inside = ok & (u >= 0.0) & (v >= 0.0) & (w >= 0.0)
    d = p - proj
    d2 = (d * d).sum(axis=1)
    better = inside & (d2 < best_d2)
    best_d2 = np.where(better, d2, best_d2)
    best_pt = np.where(better[:, None], proj, best_pt)
    return best_d2, best_pt


class TriangleClosest:
    """Exact nearest-triangle queries (pure-python backend)."""

    def __init__(self, tris: np.ndarray, bvh=None):
        self.tris = np.ascontiguousarray(tris, dtype=np.float64)
        self._centroids = self.tris.mean(axis=1)
        self._tree = cKDTree(self._centroids)
        # max vertex-to-centroid radius certifies the expanding-ring bound
        r = np.linalg.norm(self.tris - self._centroids[:, None, :], axis=2)
        self._rmax = float(r.max())

    def query(self, points: np.ndarray):
        points = np.ascontiguousarray(points, dtype=np.float64)
        n = points.shape[0]
        ntri = self.tris.shape[0]
        dist = np.empty(n)
        cpts = np.empty((n, 3))
        tids = np.empty(n, dtype=np.int32)
        for s in range(0, n, _CHUNK):
            pts = points[s : s + _CHUNK]
            m = pts.shape[0]
            pend = np.arange(m)
            k = min(16, ntri)
            cd = np.full(m, np.inf)
            cp = np.zeros((m, 3))
            ct = np.zeros(m, dtype=np.int32)
            while pend.size:
                dc, idx = self._tree.query(pts[pend], k=k)
                if k == 1:
                    dc = dc[:, None]
                    idx = idx[:, None]
                cand = self.tris[idx.ravel()]
                qrep = np.repeat(pts[pend], k, axis=0)
                d2, cpt = _closest_on_triangles(cand, qrep)
                d2 = d2.reshape(-1, k)
                cpt = cpt.reshape(-1, k, 3)
                j = np.argmin(d2, axis=1)
                rows = np.arange(pend.size)
                best = np.sqrt(d2[rows, j])
                cd[pend] = best
                cp[pend] = cpt[rows, j]
                ct[pend] = idx[rows, j].astype(np.int32)
                if k >= ntri:
                    break
                # a farther triangle can only win if its centroid lies within
                # best + rmax; certified when the k-th centroid is beyond that
                uncertain = best + self._rmax > dc[:, -1]
                pend = pend[uncertain]
                k = min(k * 4, ntri)
            dist[s : s + _CHUNK] = cd
            cpts[s : s + _CHUNK] = cp
            tids[s : s + _CHUNK] = ct
        return dist, cpts, tids


def winding_numbers(tris: np.ndarray, signs: np.ndarray,
                    points: np.ndarray) -> np.ndarray:
    """Generalized winding number of an oriented triangle set at each point.

    ``signs`` restores the orientation of triangles whose vertex order was
    canonicalized away.
    """
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    signs = np.ascontiguousarray(signs, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    out = np.zeros(n)
    tchunk = max(1, min(4096, tris.shape[0]))
    pchunk = 512
    for s in range(0, n, pchunk):
        p = points[s : s + pchunk]
        acc = np.zeros(p.shape[0])
        for ts in range(0, tris.shape[0], tchunk):
            t = tris[ts : ts + tchunk]
            a = t[None, :, 0, :] - p[:, None, :]
            b = t[None, :, 1, :] - p[:, None, :]
            c = t[None, :, 2, :] - p[:, None, :]
            la = np.sqrt((a * a).sum(-1))
            lb = np.sqrt((b * b).sum(-1))
            lc = np.sqrt((c * c).sum(-1))
            num = (a * np.cross(b, c)).sum(-1)
            den = (
                la * lb * lc
                + (a * b).sum(-1) * lc
                + (b * c).sum(-1) * la
                + (c * a).sum(-1) * lb
            )
            acc += (signs[None, ts : ts + tchunk]
                    * np.arctan2(num, den)).sum(axis=1)
        out[s : s + pchunk] = acc
    return out / (2.0 * np.pi)


def nh_energy(pos, tets, Bm, vol, mu, lam):
    """Total neo-Hookean strain energy; returns (energy, min_J)."""
    p = pos[tets]
    Ds = np.swapaxes(p[:, 1:4] - p[:, 0:1], 1, 2)
    F = Ds @ Bm
    J = np.linalg.det(F)
    minj = float(J.min())
    if minj <= 0.0:
        return np.inf, minj
    lnj = np.log(J)
    ic = (F * F).sum(axis=(1, 2))
    w = 0.5 * mu * (ic - 3.0) - mu * lnj + 0.5 * lam * lnj * lnj
    return float(w @ vol), minj


def nh_energy_grad(pos, tets, Bm, vol, mu, lam):
    """Energy and its gradient w.r.t. vertex positions; (energy, grad, min_J)."""
    p = pos[tets]
    Ds = np.swapaxes(p[:, 1:4] - p[:, 0:1], 1, 2)
    F = Ds @ Bm
    J = np.linalg.det(F)
    minj = float(J.min())
    if minj <= 0.0:
        return np.inf, None, minj
    lnj = np.log(J)
    ic = (F * F).sum(axis=(1, 2))
    w = 0.5 * mu * (ic - 3.0) - mu * lnj + 0.5 * lam * lnj * lnj
    energy = float(w @ vol)
    finv_t = np.swapaxes(np.linalg.inv(F), 1, 2)
    piola = mu * F + (lam * lnj - mu)[:, None, None] * finv_t
    h = vol[:, None, None] * (piola @ np.swapaxes(Bm, 1, 2))
    grad = np.zeros_like(pos)
    g123 = np.swapaxes(h, 1, 2)  # (E, node 1..3, comp)
    np.add.at(grad, tets[:, 0], -g123.sum(axis=1))
    for j in range(3):
        np.add.at(grad, tets[:, j + 1], g123[:, j])
    return energy, grad, minj


def nh_element_hessians(pos, tets, Bm, vol, mu, lam):
    """Per-element 12x12 energy Hessians, node-major dof order (n0x..n3z)."""
    ne = tets.shape[0]
    p = pos[tets]
    Ds = np.swapaxes(p[:, 1:4] - p[:, 0:1], 1, 2)
    F = Ds @ Bm
    J = np.linalg.det(F)
    if J.min() <= 0.0:
        raise FloatingPointError("inverted element in Hessian assembly")
    lnj = np.log(J)
    finv = np.linalg.inv(F)
    finv_t = np.swapaxes(finv, 1, 2)
    bmt = np.swapaxes(Bm, 1, 2)

    # dF for dof (node j, comp b) is e_b (x) g_j with g rows below
    g = np.empty((ne, 4, 3))
    g[:, 1:4, :] = Bm
    g[:, 0, :] = -Bm.sum(axis=1)
    q = np.einsum("eab,ejb->eja", finv_t, g)  # F^{-T} g_j

    coeff = (mu - lam * lnj)[:, None]
    k = np.zeros((ne, 12, 12))
    for j in range(4):
        for b in range(3):
            dfl = np.zeros((ne, 3, 3))
            dfl[:, b, :] = g[:, j, :]
            t2 = coeff[:, :, None] * (q[:, j, :, None] * finv_t[:, None, b, :])
            tr = np.einsum("ea,ea->e", g[:, j, :], finv[:, :, b])
            dp = mu * dfl + t2 + lam * tr[:, None, None] * finv_t
            dh = vol[:, None, None] * (dp @ bmt)  # columns: nodes 1..3
            col = np.empty((ne, 4, 3))
            col[:, 1:4, :] = np.swapaxes(dh, 1, 2)
            col[:, 0, :] = -col[:, 1:4, :].sum(axis=1)
            k[:, :, 3 * j + b] = col.reshape(ne, 12)
    return 0.5 * (k + np.swapaxes(k, 1, 2))


def splat_scatter(origin, spacing, res, verts, disp, sigma, radius):
    """Scatter Gaussian-weighted displacements onto a cubic grid.

    Returns (wsum (r,r,r), wdisp (r,r,r,3)). Accumulation is strictly in
    vertex order so results are reproducible.
    """
    wsum = np.zeros((res, res, res))
    wdisp = np.zeros((res, res, res, 3))
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    r2 = radius * radius
    axes = [origin[a] + spacing * np.arange(res) for a in range(3)]
    for i in range(verts.shape[0]):
        v = verts[i]
        los = []
        his = []
        for a in range(3):
            # +-1 slack: the exact d2 <= r2 mask below is the real filter
            lo = int(np.ceil((v[a] - radius - origin[a]) / spacing)) - 1
            hi = int(np.floor((v[a] + radius - origin[a]) / spacing)) + 1
            los.append(max(lo, 0))
            his.append(min(hi, res - 1))
        if los[0] > his[0] or los[1] > his[1] or los[2] > his[2]:
            continue
        dx = axes[0][los[0] : his[0] + 1] - v[0]
        dy = axes[1][los[1] : his[1] + 1] - v[1]
        dz = axes[2][los[2] : his[2] + 1] - v[2]
        d2 = (
            dx[:, None, None] ** 2
            + dy[None, :, None] ** 2
            + dz[None, None, :] ** 2
        )
        wgt = np.where(d2 <= r2, np.exp(-d2 * inv2s2), 0.0)
        sl = (
            slice(los[0], his[0] + 1),
            slice(los[1], his[1] + 1),
            slice(los[2], his[2] + 1),
        )
        wsum[sl] += wgt
        wdisp[sl] += wgt[:, :, :, None] * disp[i]
    return wsum, wdisp
