# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Native kernels: triangle rasterization and BVH traversal.

Arithmetic matches py_backend.py expression for expression (the build turns
FP contraction off) so either backend can be swapped in without changing
results.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, ceil, floor

cnp.import_array()

BACKEND = "native"


def raster_forward(cnp.float64_t[::1] px, cnp.float64_t[::1] py,
                   cnp.float64_t[::1] invw, cnp.int32_t[:, ::1] faces,
                   cnp.uint8_t[::1] valid, int width, int height):
    fid_arr = np.full((height, width), -1, np.int32)
    depth_arr = np.full((height, width), np.inf, np.float64)
    bary_arr = np.zeros((height, width, 3), np.float64)
    cdef cnp.int32_t[:, ::1] fid = fid_arr
    cdef cnp.float64_t[:, ::1] depth = depth_arr
    cdef cnp.float64_t[:, :, ::1] bary = bary_arr

    cdef Py_ssize_t f, n_faces = faces.shape[0]
    cdef int a, b, c, ix0, ix1, iy0, iy1, ix, iy
    cdef double x0, y0, x1, y1, x2, y2, area2, cx, cy
    cdef double lam0, lam1, lam2, iw0, iw1, iw2, linv, d
    cdef double mnx, mxx, mny, mxy

    for f in range(n_faces):
        if not valid[f]:
            continue
        a = faces[f, 0]; b = faces[f, 1]; c = faces[f, 2]
        x0 = px[a]; y0 = py[a]
        x1 = px[b]; y1 = py[b]
        x2 = px[c]; y2 = py[c]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area2 >= 0.0:
            continue
        mnx = x0
        if x1 < mnx: mnx = x1
        if x2 < mnx: mnx = x2
        mxx = x0
        if x1 > mxx: mxx = x1
        if x2 > mxx: mxx = x2
        mny = y0
        if y1 < mny: mny = y1
        if y2 < mny: mny = y2
        mxy = y0
        if y1 > mxy: mxy = y1
        if y2 > mxy: mxy = y2
        ix0 = <int>ceil(mnx - 0.5)
        if ix0 < 0: ix0 = 0
        ix1 = <int>floor(mxx - 0.5)
        if ix1 > width - 1: ix1 = width - 1
        iy0 = <int>ceil(mny - 0.5)
        if iy0 < 0: iy0 = 0
        iy1 = <int>floor(mxy - 0.5)
        if iy1 > height - 1: iy1 = height - 1
        if ix1 < ix0 or iy1 < iy0:
            continue
        iw0 = invw[a]; iw1 = invw[b]; iw2 = invw[c]
        for iy in range(iy0, iy1 + 1):
            cy = iy + 0.5
            for ix in range(ix0, ix1 + 1):
                cx = ix + 0.5
                lam0 = ((x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1)) / area2
                if lam0 < 0.0:
                    continue
                lam1 = ((x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2)) / area2
                if lam1 < 0.0:
                    continue
                lam2 = ((x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)) / area2
                if lam2 < 0.0:
                    continue
                linv = lam0 * iw0 + lam1 * iw1 + lam2 * iw2
                if linv == 0.0:
                    continue
                d = 1.0 / linv
                if d < depth[iy, ix]:
                    depth[iy, ix] = d
                    fid[iy, ix] = <cnp.int32_t>f
                    bary[iy, ix, 0] = lam0 * iw0 * d
                    bary[iy, ix, 1] = lam1 * iw1 * d
                    bary[iy, ix, 2] = lam2 * iw2 * d
    return fid_arr, bary_arr, depth_arr


cdef inline double _fmin(double a, double b) nogil:
    return a if a < b else b


cdef inline double _fmax(double a, double b) nogil:
    return a if a > b else b


cdef inline bint _slab(double ox, double oy, double oz,
                       double ix, double iy, double iz,
                       const cnp.float64_t[:, ::1] nmin,
                       const cnp.float64_t[:, ::1] nmax,
                       Py_ssize_t n, double tmin, double tmax) nogil:
    # mirrors fmin/fmax NaN semantics of the numpy path: a NaN bound
    # (0 * inf) is ignored in favor of the other slab endpoint
    cdef double tlo, thi, near, far, enter, exit_
    enter = tmin
    exit_ = tmax
    tlo = (nmin[n, 0] - ox) * ix
    thi = (nmax[n, 0] - ox) * ix
    near = _fmin(tlo, thi)
    far = _fmax(tlo, thi)
    if near == near and near > enter: enter = near
    if far == far and far < exit_: exit_ = far
    tlo = (nmin[n, 1] - oy) * iy
    thi = (nmax[n, 1] - oy) * iy
    near = _fmin(tlo, thi)
    far = _fmax(tlo, thi)
    if near == near and near > enter: enter = near
    if far == far and far < exit_: exit_ = far
    tlo = (nmin[n, 2] - oz) * iz
    thi = (nmax[n, 2] - oz) * iz
    near = _fmin(tlo, thi)
    far = _fmax(tlo, thi)
    if near == near and near > enter: enter = near
    if far == far and far < exit_: exit_ = far
    return enter <= exit_


def bvh_ray_first_hit(nodes, tris, cnp.float64_t[:, ::1] origins,
                      cnp.float64_t[:, ::1] dirs, double tmin, double tmax):
    cdef cnp.float64_t[:, ::1] nmin = nodes[0]
    cdef cnp.float64_t[:, ::1] nmax = nodes[1]
    cdef cnp.int64_t[::1] left = nodes[2]
    cdef cnp.int64_t[::1] right = nodes[3]
    cdef cnp.int64_t[::1] start = nodes[4]
    cdef cnp.int64_t[::1] count = nodes[5]
    cdef cnp.float64_t[:, ::1] t0 = tris[0]
    cdef cnp.float64_t[:, ::1] t1 = tris[1]
    cdef cnp.float64_t[:, ::1] t2 = tris[2]

    cdef Py_ssize_t n_rays = origins.shape[0]
    best_t_arr = np.full(n_rays, tmax, np.float64)
    best_slot_arr = np.full(n_rays, -1, np.int64)
    cdef cnp.float64_t[::1] best_t = best_t_arr
    cdef cnp.int64_t[::1] best_slot = best_slot_arr
    if t0.shape[0] == 0 or n_rays == 0:
        return best_t_arr, best_slot_arr

    cdef cnp.int64_t[::1] stack = np.empty(128, np.int64)
    cdef Py_ssize_t r, sp, node, s, s_end
    cdef int kx, ky, kz
    cdef double dx, dy, dz, adx, ady, adz, sx, sy, sz, swap
    cdef double ox, oy, oz, invx, invy, invz
    cdef double Ax, Ay, Az, Bx, By, Bz, Cx, Cy, Cz
    cdef double A0, A1, A2, B0, B1, B2, C0, C1, C2
    cdef double U, V, W, det, T, t

    with nogil:
        for r in range(n_rays):
            ox = origins[r, 0]; oy = origins[r, 1]; oz = origins[r, 2]
            dx = dirs[r, 0]; dy = dirs[r, 1]; dz = dirs[r, 2]
            adx = dx if dx >= 0 else -dx
            ady = dy if dy >= 0 else -dy
            adz = dz if dz >= 0 else -dz
            if adx >= ady and adx >= adz:
                kz = 0
            elif ady >= adz and ady > adx:
                kz = 1
            else:
                kz = 2
            kx = (kz + 1) % 3
            ky = (kz + 2) % 3
            if (dirs[r, kz]) < 0.0:
                kx, ky = ky, kx
            sz = 1.0 / dirs[r, kz]
            sx = dirs[r, kx] / dirs[r, kz]
            sy = dirs[r, ky] / dirs[r, kz]
            invx = 1.0 / dx
            invy = 1.0 / dy
            invz = 1.0 / dz

            sp = 0
            if _slab(ox, oy, oz, invx, invy, invz, nmin, nmax, 0, tmin, best_t[r]):
                stack[sp] = 0
                sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if not _slab(ox, oy, oz, invx, invy, invz, nmin, nmax, node,
                             tmin, best_t[r]):
                    continue
                if left[node] < 0:
                    s_end = start[node] + count[node]
                    for s in range(start[node], s_end):
                        A0 = t0[s, 0] - ox; A1 = t0[s, 1] - oy; A2 = t0[s, 2] - oz
                        B0 = t1[s, 0] - ox; B1 = t1[s, 1] - oy; B2 = t1[s, 2] - oz
                        C0 = t2[s, 0] - ox; C1 = t2[s, 1] - oy; C2 = t2[s, 2] - oz
                        Az = (A0 if kz == 0 else (A1 if kz == 1 else A2))
                        Bz = (B0 if kz == 0 else (B1 if kz == 1 else B2))
                        Cz = (C0 if kz == 0 else (C1 if kz == 1 else C2))
                        Ax = (A0 if kx == 0 else (A1 if kx == 1 else A2)) - sx * Az
                        Ay = (A0 if ky == 0 else (A1 if ky == 1 else A2)) - sy * Az
                        Bx = (B0 if kx == 0 else (B1 if kx == 1 else B2)) - sx * Bz
                        By = (B0 if ky == 0 else (B1 if ky == 1 else B2)) - sy * Bz
                        Cx = (C0 if kx == 0 else (C1 if kx == 1 else C2)) - sx * Cz
                        Cy = (C0 if ky == 0 else (C1 if ky == 1 else C2)) - sy * Cz
                        U = Cx * By - Cy * Bx
                        V = Ax * Cy - Ay * Cx
                        W = Bx * Ay - By * Ax
                        if ((U < 0.0 or V < 0.0 or W < 0.0)
                                and (U > 0.0 or V > 0.0 or W > 0.0)):
                            continue
                        det = U + V + W
                        if det == 0.0:
                            continue
                        T = U * (sz * Az) + V * (sz * Bz) + W * (sz * Cz)
                        t = T / det
                        if t > tmin and (t < best_t[r] or
                                         (t == best_t[r] and s < best_slot[r])):
                            best_t[r] = t
                            best_slot[r] = s
                else:
                    stack[sp] = left[node]
                    sp += 1
                    stack[sp] = right[node]
                    sp += 1
            if best_slot[r] < 0:
                best_t[r] = tmax
    return best_t_arr, best_slot_arr


cdef inline void _closest_on_tri(double px_, double py_, double pz_,
                                 double ax, double ay, double az,
                                 double bx, double by, double bz,
                                 double cx, double cy, double cz,
                                 double* out) nogil:
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px_ - ax, apy = py_ - ay, apz = pz_ - az
    cdef double d1 = abx * apx + aby * apy + abz * apz
    cdef double d2 = acx * apx + acy * apy + acz * apz
    cdef double bpx, bpy, bpz, d3, d4, cpx, cpy, cpz, d5, d6
    cdef double vc, vb, va, v, w, denom
    if d1 <= 0.0 and d2 <= 0.0:
        out[0] = ax; out[1] = ay; out[2] = az
        return
    bpx = px_ - bx; bpy = py_ - by; bpz = pz_ - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        out[0] = bx; out[1] = by; out[2] = bz
        return
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        out[0] = ax + v * abx; out[1] = ay + v * aby; out[2] = az + v * abz
        return
    cpx = px_ - cx; cpy = py_ - cy; cpz = pz_ - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        out[0] = cx; out[1] = cy; out[2] = cz
        return
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        out[0] = ax + w * acx; out[1] = ay + w * acy; out[2] = az + w * acz
        return
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        out[0] = bx + w * (cx - bx); out[1] = by + w * (cy - by); out[2] = bz + w * (cz - bz)
        return
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    out[0] = ax + abx * v + acx * w
    out[1] = ay + aby * v + acy * w
    out[2] = az + abz * v + acz * w


def bvh_closest_point(nodes, tris, cnp.float64_t[:, ::1] queries):
    cdef cnp.float64_t[:, ::1] nmin = nodes[0]
    cdef cnp.float64_t[:, ::1] nmax = nodes[1]
    cdef cnp.int64_t[::1] left = nodes[2]
    cdef cnp.int64_t[::1] right = nodes[3]
    cdef cnp.int64_t[::1] start = nodes[4]
    cdef cnp.int64_t[::1] count = nodes[5]
    cdef cnp.float64_t[:, ::1] t0 = tris[0]
    cdef cnp.float64_t[:, ::1] t1 = tris[1]
    cdef cnp.float64_t[:, ::1] t2 = tris[2]

    cdef Py_ssize_t nq = queries.shape[0]
    d2_arr = np.full(nq, np.inf, np.float64)
    slot_arr = np.full(nq, -1, np.int64)
    pt_arr = np.zeros((nq, 3), np.float64)
    cdef cnp.float64_t[::1] best_d2 = d2_arr
    cdef cnp.int64_t[::1] best_slot = slot_arr
    cdef cnp.float64_t[:, ::1] best_pt = pt_arr
    if t0.shape[0] == 0 or nq == 0:
        return d2_arr, slot_arr, pt_arr

    cdef cnp.int64_t[::1] stack = np.empty(128, np.int64)
    cdef Py_ssize_t q, sp, node, s, s_end
    cdef double qx, qy, qz, lb, dxx, dyy, dzz, d2
    cdef double out[3]

    with nogil:
        for q in range(nq):
            qx = queries[q, 0]; qy = queries[q, 1]; qz = queries[q, 2]
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                dxx = _fmax(nmin[node, 0] - qx, 0.0) + _fmax(qx - nmax[node, 0], 0.0)
                dyy = _fmax(nmin[node, 1] - qy, 0.0) + _fmax(qy - nmax[node, 1], 0.0)
                dzz = _fmax(nmin[node, 2] - qz, 0.0) + _fmax(qz - nmax[node, 2], 0.0)
                lb = dxx * dxx + dyy * dyy + dzz * dzz
                if lb > best_d2[q]:
                    continue
                if left[node] < 0:
                    s_end = start[node] + count[node]
                    for s in range(start[node], s_end):
                        _closest_on_tri(qx, qy, qz,
                                        t0[s, 0], t0[s, 1], t0[s, 2],
                                        t1[s, 0], t1[s, 1], t1[s, 2],
                                        t2[s, 0], t2[s, 1], t2[s, 2], out)
                        dxx = qx - out[0]; dyy = qy - out[1]; dzz = qz - out[2]
                        d2 = dxx * dxx + dyy * dyy + dzz * dzz
                        if d2 < best_d2[q] or (d2 == best_d2[q] and s < best_slot[q]):
                            best_d2[q] = d2
                            best_slot[q] = s
                            best_pt[q, 0] = out[0]
                            best_pt[q, 1] = out[1]
                            best_pt[q, 2] = out[2]
                else:
                    stack[sp] = left[node]
                    sp += 1
                    stack[sp] = right[node]
                    sp += 1
    return d2_arr, slot_arr, pt_arr
