"""Pure-numpy implementations of the hot kernels.

These mirror the Cython kernels in _native.pyx: same inputs, same arithmetic
expressions, same tie-break rules, so both backends produce bit-identical
results (the native build disables FP contraction for this reason).
"""

import math

import numpy as np

BACKEND = "python"


def raster_forward(px, py, invw, faces, valid, width, height):
    """Z-buffered scanline rasterization of projected triangles.

    px/py are pixel coordinates of the vertices (origin top-left, pixel
    centers at +0.5), invw is 1/view-depth. Back faces (non-negative signed
    area in pixel space) are culled. Returns (face_id, bary, depth) where
    face_id is -1 on background, bary are perspective-correct barycentrics
    and depth is view-space depth. Depth ties keep the lower face id.
    """
    fid = np.full((height, width), -1, np.int32)
    depth = np.full((height, width), np.inf, np.float64)
    bary = np.zeros((height, width, 3), np.float64)

    for f in range(len(faces)):
        if not valid[f]:
            continue
        a, b, c = faces[f]
        x0 = px[a]; y0 = py[a]
        x1 = px[b]; y1 = py[b]
        x2 = px[c]; y2 = py[c]
        area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area2 >= 0.0:
            continue
        ix0 = max(int(math.ceil(min(x0, x1, x2) - 0.5)), 0)
        ix1 = min(int(math.floor(max(x0, x1, x2) - 0.5)), width - 1)
        iy0 = max(int(math.ceil(min(y0, y1, y2) - 0.5)), 0)
        iy1 = min(int(math.floor(max(y0, y1, y2) - 0.5)), height - 1)
        if ix1 < ix0 or iy1 < iy0:
            continue
        cx = np.arange(ix0, ix1 + 1, dtype=np.float64) + 0.5
        cy = np.arange(iy0, iy1 + 1, dtype=np.float64) + 0.5
        cx, cy = np.meshgrid(cx, cy)
        lam0 = ((x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1)) / area2
        lam1 = ((x0 - x2) * (cy - y2) - (y0 - y2) * (cx - x2)) / area2
        lam2 = ((x1 - x0) * (cy - y0) - (y1 - y0) * (cx - x0)) / area2
        inside = (lam0 >= 0.0) & (lam1 >= 0.0) & (lam2 >= 0.0)
        if not inside.any():
            continue
        iw0 = invw[a]; iw1 = invw[b]; iw2 = invw[c]
        linv = lam0 * iw0 + lam1 * iw1 + lam2 * iw2
        with np.errstate(divide="ignore", invalid="ignore"):
            d = 1.0 / linv
        win = inside & (d < depth[iy0:iy1 + 1, ix0:ix1 + 1])
        if not win.any():
            continue
        sub = (slice(iy0, iy1 + 1), slice(ix0, ix1 + 1))
        depth[sub] = np.where(win, d, depth[sub])
        fid[sub] = np.where(win, np.int32(f), fid[sub])
        b0 = lam0 * iw0 * d
        b1 = lam1 * iw1 * d
        b2 = lam2 * iw2 * d
        for k, bk in enumerate((b0, b1, b2)):
            bary[sub + (k,)] = np.where(win, bk, bary[sub + (k,)])
    return fid, bary, depth


def _ray_setup(dirs):
    ad = np.abs(dirs)
    kz = np.argmax(ad, axis=1)
    kx = (kz + 1) % 3
    ky = (kz + 2) % 3
    neg = dirs[np.arange(len(dirs)), kz] < 0.0
    kx2 = np.where(neg, ky, kx)
    ky2 = np.where(neg, kx, ky)
    r = np.arange(len(dirs))
    dz = dirs[r, kz]
    sx = dirs[r, kx2] / dz
    sy = dirs[r, ky2] / dz
    sz = 1.0 / dz
    return kx2, ky2, kz, sx, sy, sz


def _watertight_hit(origins, kx, ky, kz, sx, sy, sz, v0, v1, v2):
    """Woop watertight ray/triangle test, double sided.

    Returns (hit_mask, t). Inputs are per-pair arrays.
    """
    r = np.arange(len(origins))
    A = v0 - origins
    B = v1 - origins
    C = v2 - origins
    Akz = A[r, kz]; Bkz = B[r, kz]; Ckz = C[r, kz]
    Ax = A[r, kx] - sx * Akz
    Ay = A[r, ky] - sy * Akz
    Bx = B[r, kx] - sx * Bkz
    By = B[r, ky] - sy * Bkz
    Cx = C[r, kx] - sx * Ckz
    Cy = C[r, ky] - sy * Ckz
    U = Cx * By - Cy * Bx
    V = Ax * Cy - Ay * Cx
    W = Bx * Ay - By * Ax
    neg = (U < 0.0) | (V < 0.0) | (W < 0.0)
    pos = (U > 0.0) | (V > 0.0) | (W > 0.0)
    det = U + V + W
    ok = ~(neg & pos) & (det != 0.0)
    T = U * (sz * Akz) + V * (sz * Bkz) + W * (sz * Ckz)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = T / det
    return ok, t


def _slab_overlap(origins, inv_dirs, nmin, nmax, tmin, tmax):
    with np.errstate(divide="ignore", invalid="ignore"):
        tlo = (nmin - origins) * inv_dirs
        thi = (nmax - origins) * inv_dirs
    near = np.fmin(tlo, thi)
    far = np.fmax(tlo, thi)
    enter = np.fmax(np.fmax(near[:, 0], near[:, 1]), np.fmax(near[:, 2], tmin))
    exit_ = np.fmin(np.fmin(far[:, 0], far[:, 1]), np.fmin(far[:, 2], tmax))
    return enter <= exit_


def bvh_ray_first_hit(nodes, tris, origins, dirs, tmin, tmax):
    """First-hit ray cast over a BVH; returns (t, slot) with slot=-1 on miss.

    Equal-t ties resolve to the lower leaf slot.
    """
    nmin, nmax, left, right, start, count = nodes
    t0, t1, t2 = tris
    n_rays = len(origins)
    best_t = np.full(n_rays, tmax, np.float64)
    best_slot = np.full(n_rays, -1, np.int64)
    if len(t0) == 0 or n_rays == 0:
        return best_t, best_slot
    kx, ky, kz, sx, sy, sz = _ray_setup(dirs)
    with np.errstate(divide="ignore"):
        inv_dirs = 1.0 / dirs

    rays = np.arange(n_rays)
    node_ids = np.zeros(n_rays, np.int64)
    ok = _slab_overlap(origins, inv_dirs, nmin[0][None, :], nmax[0][None, :],
                       tmin, best_t)
    frontier = np.stack([rays[ok], node_ids[ok]], axis=1)
    while len(frontier):
        r = frontier[:, 0]
        n = frontier[:, 1]
        leaf = left[n] < 0
        if leaf.any():
            rl = r[leaf]
            nl = n[leaf]
            reps = count[nl]
            pair_r = np.repeat(rl, reps)
            offs = np.concatenate([np.arange(c) for c in reps])
            pair_s = np.repeat(start[nl], reps) + offs
            hit, t = _watertight_hit(
                origins[pair_r],
                kx[pair_r], ky[pair_r], kz[pair_r],
                sx[pair_r], sy[pair_r], sz[pair_r],
                t0[pair_s], t1[pair_s], t2[pair_s])
            valid = hit & (t > tmin) & (t < best_t[pair_r])
            better = valid | (hit & (t == best_t[pair_r]) & (pair_s < best_slot[pair_r]))
            if better.any():
                pr = pair_r[better]
                ps = pair_s[better]
                pt = t[better]
                order = np.lexsort((ps, pt, pr))
                pr, ps, pt = pr[order], ps[order], pt[order]
                first = np.ones(len(pr), bool)
                first[1:] = pr[1:] != pr[:-1]
                pr, ps, pt = pr[first], ps[first], pt[first]
                upd = (pt < best_t[pr]) | ((pt == best_t[pr]) & (ps < best_slot[pr]))
                best_t[pr[upd]] = pt[upd]
                best_slot[pr[upd]] = ps[upd]
        inner = ~leaf
        if not inner.any():
            break
        ri = r[inner]
        ni = n[inner]
        children = np.concatenate([left[ni], right[ni]])
        rr = np.concatenate([ri, ri])
        ok = _slab_overlap(origins[rr], inv_dirs[rr], nmin[children], nmax[children],
                           tmin, best_t[rr])
        frontier = np.stack([rr[ok], children[ok]], axis=1)
    best_slot[best_t >= tmax] = -1
    return best_t, best_slot


def _closest_on_triangles(p, a, b, c):
    """Ericson closest-point-on-triangle, vectorized over pairs."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    cond_a = (d1 <= 0.0) & (d2 <= 0.0)
    cond_b = (d3 >= 0.0) & (d4 <= d3)
    vc = d1 * d4 - d3 * d2
    cond_ab = (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0)
    cond_c = (d6 >= 0.0) & (d5 <= d6)
    vb = d5 * d2 - d1 * d6
    cond_ac = (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0)
    va = d3 * d6 - d5 * d4
    cond_bc = (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
    pt_ab = a + v_ab[:, None] * ab
    pt_ac = a + w_ac[:, None] * ac
    pt_bc = b + w_bc[:, None] * (c - b)
    v_in = vb * denom
    w_in = vc * denom
    pt_in = a + v_in[:, None] * ab + w_in[:, None] * ac

    out = pt_in.copy()
    # priority order mirrors the scalar branch cascade
    chosen = np.zeros(len(p), bool)
    for cond, pt in ((cond_a, a), (cond_b, b), (cond_ab, pt_ab), (cond_c, c),
                     (cond_ac, pt_ac), (cond_bc, pt_bc)):
        use = cond & ~chosen
        out[use] = pt[use]
        chosen |= cond
    return out


def _aabb_dist2(p, nmin, nmax):
    d = np.maximum(nmin - p, 0.0) + np.maximum(p - nmax, 0.0)
    return np.einsum("ij,ij->i", d, d)


def bvh_closest_point(nodes, tris, queries):
    """Closest surface point per query; returns (d2, slot, point).

    Equal-distance ties resolve to the lower leaf slot.
    """
    nmin, nmax, left, right, start, count = nodes
    t0, t1, t2 = tris
    nq = len(queries)
    best_d2 = np.full(nq, np.inf)
    best_slot = np.full(nq, -1, np.int64)
    best_pt = np.zeros((nq, 3))
    if len(t0) == 0 or nq == 0:
        return best_d2, best_slot, best_pt

    frontier = np.stack([np.arange(nq, dtype=np.int64),
                         np.zeros(nq, np.int64)], axis=1)
    while len(frontier):
        q = frontier[:, 0]
        n = frontier[:, 1]
        keep = _aabb_dist2(queries[q], nmin[n], nmax[n]) <= best_d2[q]
        q, n = q[keep], n[keep]
        if not len(q):
            break
        leaf = left[n] < 0
        if leaf.any():
            ql = q[leaf]
            nl = n[leaf]
            reps = count[nl]
            pair_q = np.repeat(ql, reps)
            offs = np.concatenate([np.arange(c) for c in reps])
            pair_s = np.repeat(start[nl], reps) + offs
            pts = _closest_on_triangles(queries[pair_q], t0[pair_s], t1[pair_s], t2[pair_s])
            diff = queries[pair_q] - pts
            d2 = np.einsum("ij,ij->i", diff, diff)
            order = np.lexsort((pair_s, d2, pair_q))
            pq, ps, pd, pp = pair_q[order], pair_s[order], d2[order], pts[order]
            first = np.ones(len(pq), bool)
            first[1:] = pq[1:] != pq[:-1]
            pq, ps, pd, pp = pq[first], ps[first], pd[first], pp[first]
            upd = (pd < best_d2[pq]) | ((pd == best_d2[pq]) & (ps < best_slot[pq]))
            best_d2[pq[upd]] = pd[upd]
            best_slot[pq[upd]] = ps[upd]
            best_pt[pq[upd]] = pp[upd]
        inner = ~leaf
        if inner.any():
            qi = q[inner]
            ni = n[inner]
            children = np.concatenate([left[ni], right[ni]])
            qq = np.concatenate([qi, qi])
            frontier = np.stack([qq, children], axis=1)
        else:
            frontier = np.zeros((0, 2), np.int64)
    return best_d2, best_slot, best_pt
