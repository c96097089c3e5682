# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: BVH closest-point queries, winding numbers,
neo-Hookean element assembly, and Gaussian displacement splatting.

The pure-numpy twin lives in ``v2sreg._kernels_py``; :mod:`v2sreg.kernels`
picks whichever is available.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport atan2, ceil, exp, floor, log, sqrt

cnp.import_array()

DEF STACK_MAX = 128


cdef inline double _dot(double ax, double ay, double az,
                        double bx, double by, double bz) nogil:
    return ax * bx + ay * by + az * bz


cdef inline double _seg_d2(double ox, double oy, double oz,
                           double ex, double ey, double ez,
                           double px, double py, double pz,
                           double* qx, double* qy, double* qz) nogil:
    cdef double tn = (px - ox) * ex + (py - oy) * ey + (pz - oz) * ez
    cdef double td = ex * ex + ey * ey + ez * ez
    cdef double t = 0.0
    if td > 0.0:
        t = tn / td
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    qx[0] = ox + t * ex
    qy[0] = oy + t * ey
    qz[0] = oz + t * ez
    cdef double dx = px - qx[0]
    cdef double dy = py - qy[0]
    cdef double dz = pz - qz[0]
    return dx * dx + dy * dy + dz * dz


cdef double _tri_closest(const double* tri, double px, double py, double pz,
                         double* out) nogil:
    """Squared distance from p to triangle (9 doubles); closest point in out."""
    cdef double ax = tri[0], ay = tri[1], az = tri[2]
    cdef double bx = tri[3], by = tri[4], bz = tri[5]
    cdef double cx = tri[6], cy = tri[7], cz = tri[8]
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double bcx = cx - bx, bcy = cy - by, bcz = cz - bz
    cdef double best, d2, qx, qy, qz
    cdef double ox, oy, oz, nx, ny, nz, nn, u, v, w

    best = _seg_d2(ax, ay, az, abx, aby, abz, px, py, pz, &qx, &qy, &qz)
    out[0] = qx; out[1] = qy; out[2] = qz
    d2 = _seg_d2(ax, ay, az, acx, acy, acz, px, py, pz, &qx, &qy, &qz)
    if d2 < best:
        best = d2
        out[0] = qx; out[1] = qy; out[2] = qz
    d2 = _seg_d2(bx, by, bz, bcx, bcy, bcz, px, py, pz, &qx, &qy, &qz)
    if d2 < best:
        best = d2
        out[0] = qx; out[1] = qy; out[2] = qz

    # interior projection
    nx = aby * acz - abz * acy
    ny = abz * acx - abx * acz
    nz = abx * acy - aby * acx
    nn = nx * nx + ny * ny + nz * nz
    if nn > 0.0:
        d2 = ((px - ax) * nx + (py - ay) * ny + (pz - az) * nz) / nn
        ox = px - d2 * nx
        oy = py - d2 * ny
        oz = pz - d2 * nz
        # barycentric sign tests against the face normal
        u = ((by - oy) * (cz - oz) - (bz - oz) * (cy - oy)) * nx \
            + ((bz - oz) * (cx - ox) - (bx - ox) * (cz - oz)) * ny \
            + ((bx - ox) * (cy - oy) - (by - oy) * (cx - ox)) * nz
        v = ((cy - oy) * (az - oz) - (cz - oz) * (ay - oy)) * nx \
            + ((cz - oz) * (ax - ox) - (cx - ox) * (az - oz)) * ny \
            + ((cx - ox) * (ay - oy) - (cy - oy) * (ax - ox)) * nz
        w = ((ay - oy) * (bz - oz) - (az - oz) * (by - oy)) * nx \
            + ((az - oz) * (bx - ox) - (ax - ox) * (bz - oz)) * ny \
            + ((ax - ox) * (by - oy) - (ay - oy) * (bx - ox)) * nz
        if u >= 0.0 and v >= 0.0 and w >= 0.0:
            d2 = (px - ox) * (px - ox) + (py - oy) * (py - oy) \
                + (pz - oz) * (pz - oz)
            if d2 < best:
                best = d2
                out[0] = ox; out[1] = oy; out[2] = oz
    return best


cdef inline double _box_d2(double px, double py, double pz,
                           const double* bmin, const double* bmax) nogil:
    cdef double d = 0.0, t
    t = bmin[0] - px
    if t > 0.0:
        d += t * t
    t = px - bmax[0]
    if t > 0.0:
        d += t * t
    t = bmin[1] - py
    if t > 0.0:
        d += t * t
    t = py - bmax[1]
    if t > 0.0:
        d += t * t
    t = bmin[2] - pz
    if t > 0.0:
        d += t * t
    t = pz - bmax[2]
    if t > 0.0:
        d += t * t
    return d


def bvh_closest(double[:, :, ::1] tris,
                double[:, ::1] bbmin, double[:, ::1] bbmax,
                int[::1] left, int[::1] right,
                int[::1] start, int[::1] count, int[::1] order,
                double[:, ::1] points):
    """Exact nearest point on a triangle set for each query point."""
    cdef Py_ssize_t n = points.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] cpts = np.empty((n, 3))
    cdef cnp.ndarray[cnp.int32_t, ndim=1] tids = np.empty(n, dtype=np.int32)
    cdef double[::1] dist_v = dist
    cdef double[:, ::1] cpts_v = cpts
    cdef int[::1] tids_v = tids

    cdef int snode[STACK_MAX]
    cdef double slb[STACK_MAX]
    cdef Py_ssize_t i
    cdef int sp, node, t, k, lc, rc
    cdef double px, py, pz, best, lb, lbl, lbr, d2
    cdef double q[3]

    with nogil:
        for i in range(n):
            px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
            best = 1e300
            sp = 0
            snode[sp] = 0
            slb[sp] = _box_d2(px, py, pz, &bbmin[0, 0], &bbmax[0, 0])
            sp += 1
            while sp > 0:
                sp -= 1
                node = snode[sp]
                lb = slb[sp]
                if lb >= best:
                    continue
                if left[node] < 0:
                    for k in range(start[node], start[node] + count[node]):
                        t = order[k]
                        d2 = _tri_closest(&tris[t, 0, 0], px, py, pz, q)
                        if d2 < best:
                            best = d2
                            dist_v[i] = d2
                            cpts_v[i, 0] = q[0]
                            cpts_v[i, 1] = q[1]
                            cpts_v[i, 2] = q[2]
                            tids_v[i] = t
                else:
                    lc = left[node]
                    rc = right[node]
                    lbl = _box_d2(px, py, pz, &bbmin[lc, 0], &bbmax[lc, 0])
                    lbr = _box_d2(px, py, pz, &bbmin[rc, 0], &bbmax[rc, 0])
                    if lbl <= lbr:
                        if lbr < best:
                            snode[sp] = rc; slb[sp] = lbr; sp += 1
                        if lbl < best:
                            snode[sp] = lc; slb[sp] = lbl; sp += 1
                    else:
                        if lbl < best:
                            snode[sp] = lc; slb[sp] = lbl; sp += 1
                        if lbr < best:
                            snode[sp] = rc; slb[sp] = lbr; sp += 1
            dist_v[i] = sqrt(dist_v[i])
    return dist, cpts, tids


def winding_numbers(double[:, :, ::1] tris, double[::1] signs,
                    double[:, ::1] points):
    """Generalized winding number of an oriented triangle set at each point.

    ``signs`` restores the orientation of triangles whose vertex order was
    canonicalized away.
    """
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t nt = tris.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(n)
    cdef double[::1] out_v = out
    cdef Py_ssize_t i, t
    cdef double px, py, pz, acc
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz
    cdef double la, lb, lc, num, den
    with nogil:
        for i in range(n):
            px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
            acc = 0.0
            for t in range(nt):
                ax = tris[t, 0, 0] - px; ay = tris[t, 0, 1] - py; az = tris[t, 0, 2] - pz
                bx = tris[t, 1, 0] - px; by = tris[t, 1, 1] - py; bz = tris[t, 1, 2] - pz
                cx = tris[t, 2, 0] - px; cy = tris[t, 2, 1] - py; cz = tris[t, 2, 2] - pz
                la = sqrt(ax * ax + ay * ay + az * az)
                lb = sqrt(bx * bx + by * by + bz * bz)
                lc = sqrt(cx * cx + cy * cy + cz * cz)
                num = ax * (by * cz - bz * cy) + ay * (bz * cx - bx * cz) \
                    + az * (bx * cy - by * cx)
                den = la * lb * lc \
                    + (ax * bx + ay * by + az * bz) * lc \
                    + (bx * cx + by * cy + bz * cz) * la \
                    + (cx * ax + cy * ay + cz * az) * lb
                acc += signs[t] * atan2(num, den)
            out_v[i] = acc / (2.0 * 3.141592653589793)
    return out


cdef inline double _det3(const double* f) nogil:
    return f[0] * (f[4] * f[8] - f[5] * f[7]) \
        - f[1] * (f[3] * f[8] - f[5] * f[6]) \
        + f[2] * (f[3] * f[7] - f[4] * f[6])


cdef inline void _inv3(const double* f, double det, double* inv) nogil:
    cdef double id_ = 1.0 / det
    inv[0] = (f[4] * f[8] - f[5] * f[7]) * id_
    inv[1] = (f[2] * f[7] - f[1] * f[8]) * id_
    inv[2] = (f[1] * f[5] - f[2] * f[4]) * id_
    inv[3] = (f[5] * f[6] - f[3] * f[8]) * id_
    inv[4] = (f[0] * f[8] - f[2] * f[6]) * id_
    inv[5] = (f[2] * f[3] - f[0] * f[5]) * id_
    inv[6] = (f[3] * f[7] - f[4] * f[6]) * id_
    inv[7] = (f[1] * f[6] - f[0] * f[7]) * id_
    inv[8] = (f[0] * f[4] - f[1] * f[3]) * id_


cdef inline void _def_grad(double[:, ::1] pos, int[:, ::1] tets,
                           double[:, :, ::1] bm, Py_ssize_t e, double* f) nogil:
    cdef int n0 = tets[e, 0], n1 = tets[e, 1], n2 = tets[e, 2], n3 = tets[e, 3]
    cdef double ds[9]
    cdef int r, c
    ds[0] = pos[n1, 0] - pos[n0, 0]
    ds[3] = pos[n1, 1] - pos[n0, 1]
    ds[6] = pos[n1, 2] - pos[n0, 2]
    ds[1] = pos[n2, 0] - pos[n0, 0]
    ds[4] = pos[n2, 1] - pos[n0, 1]
    ds[7] = pos[n2, 2] - pos[n0, 2]
    ds[2] = pos[n3, 0] - pos[n0, 0]
    ds[5] = pos[n3, 1] - pos[n0, 1]
    ds[8] = pos[n3, 2] - pos[n0, 2]
    for r in range(3):
        for c in range(3):
            f[3 * r + c] = ds[3 * r + 0] * bm[e, 0, c] \
                + ds[3 * r + 1] * bm[e, 1, c] \
                + ds[3 * r + 2] * bm[e, 2, c]


def nh_energy(double[:, ::1] pos, int[:, ::1] tets, double[:, :, ::1] bm,
              double[::1] vol, double mu, double lam):
    """Total neo-Hookean strain energy; returns (energy, min_J)."""
    cdef Py_ssize_t ne = tets.shape[0]
    cdef Py_ssize_t e
    cdef double f[9]
    cdef double j, lnj, ic, energy = 0.0, minj = 1e300
    with nogil:
        for e in range(ne):
            _def_grad(pos, tets, bm, e, f)
            j = _det3(f)
            if j < minj:
                minj = j
            if j <= 0.0:
                continue
            lnj = log(j)
            ic = f[0] * f[0] + f[1] * f[1] + f[2] * f[2] \
                + f[3] * f[3] + f[4] * f[4] + f[5] * f[5] \
                + f[6] * f[6] + f[7] * f[7] + f[8] * f[8]
            energy += vol[e] * (0.5 * mu * (ic - 3.0) - mu * lnj
                                + 0.5 * lam * lnj * lnj)
    if minj <= 0.0:
        return np.inf, minj
    return energy, minj


def nh_energy_grad(double[:, ::1] pos, int[:, ::1] tets, double[:, :, ::1] bm,
                   double[::1] vol, double mu, double lam):
    """Energy and its gradient w.r.t. vertex positions; (energy, grad, min_J)."""
    cdef Py_ssize_t ne = tets.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] grad = np.zeros(
        (pos.shape[0], 3))
    cdef double[:, ::1] grad_v = grad
    cdef Py_ssize_t e
    cdef int r, c, n0, n1, n2, n3
    cdef double f[9]
    cdef double finv[9]
    cdef double p[9]
    cdef double h[9]
    cdef double j, lnj, ic, s, energy = 0.0, minj = 1e300
    with nogil:
        for e in range(ne):
            _def_grad(pos, tets, bm, e, f)
            j = _det3(f)
            if j < minj:
                minj = j
            if j <= 0.0:
                continue
            lnj = log(j)
            ic = 0.0
            for r in range(9):
                ic += f[r] * f[r]
            energy += vol[e] * (0.5 * mu * (ic - 3.0) - mu * lnj
                                + 0.5 * lam * lnj * lnj)
            _inv3(f, j, finv)
            s = lam * lnj - mu
            # P = mu F + s F^{-T}
            for r in range(3):
                for c in range(3):
                    p[3 * r + c] = mu * f[3 * r + c] + s * finv[3 * c + r]
            # H = vol * P Bm^T ; column k is dE/dp_{k+1}
            for r in range(3):
                for c in range(3):
                    h[3 * r + c] = vol[e] * (
                        p[3 * r + 0] * bm[e, c, 0]
                        + p[3 * r + 1] * bm[e, c, 1]
                        + p[3 * r + 2] * bm[e, c, 2])
            n0 = tets[e, 0]; n1 = tets[e, 1]; n2 = tets[e, 2]; n3 = tets[e, 3]
            for r in range(3):
                grad_v[n1, r] += h[3 * r + 0]
                grad_v[n2, r] += h[3 * r + 1]
                grad_v[n3, r] += h[3 * r + 2]
                grad_v[n0, r] -= h[3 * r + 0] + h[3 * r + 1] + h[3 * r + 2]
    if minj <= 0.0:
        return np.inf, None, minj
    return energy, grad, minj


def nh_element_hessians(double[:, ::1] pos, int[:, ::1] tets,
                        double[:, :, ::1] bm, double[::1] vol,
                        double mu, double lam):
    """Per-element 12x12 energy Hessians, node-major dof order (n0x..n3z)."""
    cdef Py_ssize_t ne = tets.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((ne, 12, 12))
    cdef double[:, :, ::1] out_v = out
    cdef Py_ssize_t e
    cdef int jn, b, r, c, col
    cdef double f[9]
    cdef double finv[9]
    cdef double g[12]
    cdef double q[3]
    cdef double dp[9]
    cdef double dh[9]
    cdef double kel[144]
    cdef double j, lnj, coeff, tr, val
    for e in range(ne):
        _def_grad(pos, tets, bm, e, f)
        j = _det3(f)
        if j <= 0.0:
            raise FloatingPointError("inverted element in Hessian assembly")
        lnj = log(j)
        _inv3(f, j, finv)
        coeff = mu - lam * lnj
        for b in range(3):
            g[3 * 0 + b] = -(bm[e, 0, b] + bm[e, 1, b] + bm[e, 2, b])
            g[3 * 1 + b] = bm[e, 0, b]
            g[3 * 2 + b] = bm[e, 1, b]
            g[3 * 3 + b] = bm[e, 2, b]
        for jn in range(4):
            for b in range(3):
                col = 3 * jn + b
                # q = F^{-T} g_j
                for r in range(3):
                    q[r] = finv[0 + r] * g[3 * jn + 0] \
                        + finv[3 + r] * g[3 * jn + 1] \
                        + finv[6 + r] * g[3 * jn + 2]
                tr = g[3 * jn + 0] * finv[0 + b] \
                    + g[3 * jn + 1] * finv[3 + b] \
                    + g[3 * jn + 2] * finv[6 + b]
                # dP = mu dF + coeff (q (x) FinvT_row_b) + lam tr F^{-T}
                for r in range(3):
                    for c in range(3):
                        val = coeff * q[r] * finv[3 * b + c] \
                            + lam * tr * finv[3 * c + r]
                        if r == b:
                            val += mu * g[3 * jn + c]
                        dp[3 * r + c] = val
                for r in range(3):
                    for c in range(3):
                        dh[3 * r + c] = vol[e] * (
                            dp[3 * r + 0] * bm[e, c, 0]
                            + dp[3 * r + 1] * bm[e, c, 1]
                            + dp[3 * r + 2] * bm[e, c, 2])
                for r in range(3):
                    kel[(3 * 1 + r) * 12 + col] = dh[3 * r + 0]
                    kel[(3 * 2 + r) * 12 + col] = dh[3 * r + 1]
                    kel[(3 * 3 + r) * 12 + col] = dh[3 * r + 2]
                    kel[(3 * 0 + r) * 12 + col] = -(
                        dh[3 * r + 0] + dh[3 * r + 1] + dh[3 * r + 2])
        for r in range(12):
            for c in range(12):
                out_v[e, r, c] = 0.5 * (kel[r * 12 + c] + kel[c * 12 + r])
    return out


def splat_scatter(double[::1] origin, double spacing, int res,
                  double[:, ::1] verts, double[:, ::1] disp,
                  double sigma, double radius):
    """Scatter Gaussian-weighted displacements onto a cubic grid."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3] wsum = np.zeros((res, res, res))
    cdef cnp.ndarray[cnp.float64_t, ndim=4] wdisp = np.zeros((res, res, res, 3))
    cdef double[:, :, ::1] wsum_v = wsum
    cdef double[:, :, :, ::1] wdisp_v = wdisp
    cdef Py_ssize_t nv = verts.shape[0]
    cdef Py_ssize_t i
    cdef int lo[3]
    cdef int hi[3]
    cdef int a, ix, iy, iz
    cdef double inv2s2 = 1.0 / (2.0 * sigma * sigma)
    cdef double r2 = radius * radius
    cdef double vx, vy, vz, dx, dy, dz, d2, w
    with nogil:
        for i in range(nv):
            vx = verts[i, 0]; vy = verts[i, 1]; vz = verts[i, 2]
            for a in range(3):
                # +-1 slack: the exact d2 <= r2 test below is the real filter
                lo[a] = <int>ceil((verts[i, a] - radius - origin[a]) / spacing) - 1
                hi[a] = <int>floor((verts[i, a] + radius - origin[a]) / spacing) + 1
                if lo[a] < 0:
                    lo[a] = 0
                if hi[a] > res - 1:
                    hi[a] = res - 1
            for ix in range(lo[0], hi[0] + 1):
                dx = origin[0] + spacing * ix - vx
                for iy in range(lo[1], hi[1] + 1):
                    dy = origin[1] + spacing * iy - vy
                    for iz in range(lo[2], hi[2] + 1):
                        dz = origin[2] + spacing * iz - vz
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 <= r2:
                            w = exp(-d2 * inv2s2)
                            wsum_v[ix, iy, iz] += w
                            wdisp_v[ix, iy, iz, 0] += w * disp[i, 0]
                            wdisp_v[ix, iy, iz, 1] += w * disp[i, 1]
                            wdisp_v[ix, iy, iz, 2] += w * disp[i, 2]
    return wsum, wdisp
