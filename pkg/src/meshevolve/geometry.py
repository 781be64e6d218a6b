"""Spatial acceleration and exact geometric predicates.

BVH over triangles (median split on the longest axis) backing ray casting,
closest-point queries and self-intersection candidate pruning. Orientation
predicates use a floating-point filter with an exact rational fallback, so
the triangle-triangle intersection classification is reliable even for
near-degenerate inputs.
"""

from fractions import Fraction

import numpy as np

from . import _kernels

_LEAF_SIZE = 8

# conservative relative filter constant for the orientation determinants
# (well above Shewchuk's exact bounds for 3x3 / 2x2 expansions)
_FILTER_EPS = 1e-13


class TriangleBvh:
    """Static BVH over a triangle set.

    Zero-area triangles are excluded from the leaves (they would poison
    closest-point queries); ``slot_to_face`` maps leaf slots back to input
    face indices.
    """

    def __init__(self, triangles):
        triangles = np.asarray(triangles, np.float64)
        if triangles.ndim != 3:
            raise ValueError("triangles must be (F, 3, 3)")
        area2 = np.linalg.norm(np.cross(triangles[:, 1] - triangles[:, 0],
                                        triangles[:, 2] - triangles[:, 0]), axis=1)
        keep = np.flatnonzero(area2 > 0.0)
        tris = triangles[keep]
        n = len(tris)
        self._empty = n == 0
        if self._empty:
            self.nodes = (np.zeros((1, 3)), np.zeros((1, 3)),
                          np.full(1, -1, np.int64), np.full(1, -1, np.int64),
                          np.zeros(1, np.int64), np.zeros(1, np.int64))
            self.tris = (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)))
            self.slot_to_face = np.zeros(0, np.int64)
            return

        lo = tris.min(axis=1)
        hi = tris.max(axis=1)
        centroid = tris.mean(axis=1)

        nmin, nmax, left, right, start, count = [], [], [], [], [], []
        order = np.arange(n)

        def new_node(b, e):
            idx = order[b:e]
            nmin.append(lo[idx].min(axis=0))
            nmax.append(hi[idx].max(axis=0))
            left.append(-1)
            right.append(-1)
            start.append(b)
            count.append(e - b)
            return len(nmin) - 1

        work = [(0, n)]
        node_ids = [new_node(0, n)]
        while work:
            b, e = work.pop()
            node = node_ids.pop()
            if e - b <= _LEAF_SIZE:
                continue
            idxs = order[b:e]
            ext = hi[idxs].max(axis=0) - lo[idxs].min(axis=0)
            axis = int(np.argmax(ext))
            local = np.argsort(centroid[idxs, axis], kind="stable")
            order[b:e] = idxs[local]
            mid = b + (e - b) // 2
            li = new_node(b, mid)
            ri = new_node(mid, e)
            left[node] = li
            right[node] = ri
            start[node] = -1
            count[node] = 0
            work.append((b, mid))
            node_ids.append(li)
            work.append((mid, e))
            node_ids.append(ri)

        self.nodes = (np.ascontiguousarray(nmin, np.float64),
                      np.ascontiguousarray(nmax, np.float64),
                      np.asarray(left, np.int64), np.asarray(right, np.int64),
                      np.asarray(start, np.int64), np.asarray(count, np.int64))
        perm = order
        self.tris = (np.ascontiguousarray(tris[perm, 0]),
                     np.ascontiguousarray(tris[perm, 1]),
                     np.ascontiguousarray(tris[perm, 2]))
        self.slot_to_face = keep[perm].astype(np.int64)

    def ray_first_hit(self, origins, dirs, tmin=0.0, tmax=np.inf):
        """First intersection per ray: (t, face_id), face_id -1 on miss."""
        origins = np.ascontiguousarray(origins, np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, np.float64).reshape(-1, 3)
        if self._empty:
            return np.full(len(origins), tmax), np.full(len(origins), -1, np.int64)
        t, slot = _kernels.bvh_ray_first_hit(self.nodes, self.tris, origins, dirs,
                                             float(tmin), float(tmax))
        fid = np.where(slot >= 0, self.slot_to_face[np.maximum(slot, 0)], -1)
        return t, fid

    def closest_points(self, queries):
        """Closest surface point per query: (distance, face_id, point)."""
        queries = np.ascontiguousarray(queries, np.float64).reshape(-1, 3)
        if self._empty:
            return (np.full(len(queries), np.inf), np.full(len(queries), -1, np.int64),
                    np.zeros((len(queries), 3)))
        d2, slot, pt = _kernels.bvh_closest_point(self.nodes, self.tris, queries)
        fid = np.where(slot >= 0, self.slot_to_face[np.maximum(slot, 0)], -1)
        return np.sqrt(d2), fid, pt

    def aabb_candidates(self, lo, hi):
        """Slots whose leaf AABB overlaps the query box (single query)."""
        nmin, nmax, left, right, start, count = self.nodes
        if self._empty:
            return np.zeros(0, np.int64)
        out = []
        stack = [0]
        while stack:
            n = stack.pop()
            if (nmin[n] > hi).any() or (nmax[n] < lo).any():
                continue
            if left[n] < 0:
                out.extend(range(start[n], start[n] + count[n]))
            else:
                stack.append(left[n])
                stack.append(right[n])
        return np.asarray(out, np.int64)

    def self_overlap_pairs(self):
        """Face-id pairs (i, j), i < j, whose triangle AABBs overlap."""
        nmin, nmax, left, right, start, count = self.nodes
        if self._empty:
            return np.zeros((0, 2), np.int64)
        t0, t1, t2 = self.tris
        tri_lo = np.minimum(np.minimum(t0, t1), t2)
        tri_hi = np.maximum(np.maximum(t0, t1), t2)
        pairs = []
        stack = [(0, 0)]
        while stack:
            a, b = stack.pop()
            if (nmin[a] > nmax[b]).any() or (nmin[b] > nmax[a]).any():
                continue
            a_leaf = left[a] < 0
            b_leaf = left[b] < 0
            if a_leaf and b_leaf:
                sa = np.arange(start[a], start[a] + count[a])
                sb = np.arange(start[b], start[b] + count[b])
                ga, gb = np.meshgrid(sa, sb, indexing="ij")
                ga = ga.ravel()
                gb = gb.ravel()
                keep = ga < gb
                ga, gb = ga[keep], gb[keep]
                if len(ga):
                    box_ok = ~((tri_lo[ga] > tri_hi[gb]) | (tri_lo[gb] > tri_hi[ga])).any(axis=1)
                    if box_ok.any():
                        pairs.append(np.stack([ga[box_ok], gb[box_ok]], axis=1))
            elif a_leaf:
                stack.append((a, left[b]))
                stack.append((a, right[b]))
            elif b_leaf:
                stack.append((left[a], b))
                stack.append((right[a], b))
            else:
                if a == b:
                    stack.append((left[a], left[a]))
                    stack.append((right[a], right[a]))
                    stack.append((left[a], right[a]))
                else:
                    stack.append((left[a], left[b]))
                    stack.append((left[a], right[b]))
                    stack.append((right[a], left[b]))
                    stack.append((right[a], right[b]))
        if not pairs:
            return np.zeros((0, 2), np.int64)
        slots = np.concatenate(pairs)
        fids = self.slot_to_face[slots]
        fids = np.sort(fids, axis=1)
        return np.unique(fids, axis=0)


# ---------------------------------------------------------------------------
# exact-filtered orientation predicates


def _orient3d_exact(a, b, c, d):
    av = [Fraction(float(a[k])) - Fraction(float(d[k])) for k in range(3)]
    bv = [Fraction(float(b[k])) - Fraction(float(d[k])) for k in range(3)]
    cv = [Fraction(float(c[k])) - Fraction(float(d[k])) for k in range(3)]
    det = (av[0] * (bv[1] * cv[2] - bv[2] * cv[1])
           - av[1] * (bv[0] * cv[2] - bv[2] * cv[0])
           + av[2] * (bv[0] * cv[1] - bv[1] * cv[0]))
    return (det < 0) - (det > 0)


def orient3d_batch(a, b, c, d):
    """Sign of the orientation determinant of (a, b, c, d), exact.

    Positive when d lies on the positive side of plane (a, b, c) with CCW
    convention. Inputs are (N, 3) arrays; output is int8 in {-1, 0, +1}.
    """
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    c = np.asarray(c, np.float64)
    d = np.asarray(d, np.float64)
    u = a - d
    v = b - d
    w = c - d
    m0 = v[..., 1] * w[..., 2] - v[..., 2] * w[..., 1]
    m1 = v[..., 0] * w[..., 2] - v[..., 2] * w[..., 0]
    m2 = v[..., 0] * w[..., 1] - v[..., 1] * w[..., 0]
    det = u[..., 0] * m0 - u[..., 1] * m1 + u[..., 2] * m2
    p0 = np.abs(v[..., 1] * w[..., 2]) + np.abs(v[..., 2] * w[..., 1])
    p1 = np.abs(v[..., 0] * w[..., 2]) + np.abs(v[..., 2] * w[..., 0])
    p2 = np.abs(v[..., 0] * w[..., 1]) + np.abs(v[..., 1] * w[..., 0])
    perm = (np.abs(u[..., 0]) * p0 + np.abs(u[..., 1]) * p1
            + np.abs(u[..., 2]) * p2)
    bound = _FILTER_EPS * perm
    # positive = d on the cross(b-a, c-a) side of the plane
    sign = np.where(det < -bound, 1, np.where(det > bound, -1, 0)).astype(np.int8)
    uncertain = np.flatnonzero((np.abs(det) <= bound) & (perm > 0))
    flat = sign.reshape(-1)
    af, bf, cf, df = (x.reshape(-1, 3) for x in (a, b, c, d))
    for i in uncertain:
        flat[i] = _orient3d_exact(af[i], bf[i], cf[i], df[i])
    return sign


def _orient2d_exact(a, b, c):
    ax = Fraction(float(a[0])) - Fraction(float(c[0]))
    ay = Fraction(float(a[1])) - Fraction(float(c[1]))
    bx = Fraction(float(b[0])) - Fraction(float(c[0]))
    by = Fraction(float(b[1])) - Fraction(float(c[1]))
    det = ax * by - ay * bx
    return (det > 0) - (det < 0)


def orient2d_batch(a, b, c):
    """Exact sign of the 2D orientation of (a, b, c); inputs (N, 2)."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    c = np.asarray(c, np.float64)
    det = ((a[..., 0] - c[..., 0]) * (b[..., 1] - c[..., 1])
           - (a[..., 1] - c[..., 1]) * (b[..., 0] - c[..., 0]))
    perm = (np.abs((a[..., 0] - c[..., 0]) * (b[..., 1] - c[..., 1]))
            + np.abs((a[..., 1] - c[..., 1]) * (b[..., 0] - c[..., 0])))
    bound = _FILTER_EPS * perm
    sign = np.where(det > bound, 1, np.where(det < -bound, -1, 0)).astype(np.int8)
    uncertain = np.flatnonzero((np.abs(det) <= bound) & (perm > 0))
    flat = sign.reshape(-1)
    af, bf, cf = (x.reshape(-1, 2) for x in (a, b, c))
    for i in uncertain:
        flat[i] = _orient2d_exact(af[i], bf[i], cf[i])
    return sign


def _segment_crosses_triangle(a, b, p, q, r):
    """Segment (a,b) vs triangle (p,q,r), non-coplanar path. Batched.

    Touching contacts count as intersections; the fully coplanar segment
    case is reported separately (mask ``coplanar``) for 2D handling.
    """
    sa = orient3d_batch(p, q, r, a)
    sb = orient3d_batch(p, q, r, b)
    coplanar = (sa == 0) & (sb == 0)
    straddle = (sa * sb <= 0) & ~coplanar
    s1 = orient3d_batch(a, b, p, q)
    s2 = orient3d_batch(a, b, q, r)
    s3 = orient3d_batch(a, b, r, p)
    same = (((s1 >= 0) & (s2 >= 0) & (s3 >= 0))
            | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0)))
    return straddle & same, coplanar


def _project_plane(tri_a, tri_b):
    """Drop the dominant-normal axis to get exact 2D projections."""
    n = np.cross(tri_a[:, 1] - tri_a[:, 0], tri_a[:, 2] - tri_a[:, 0])
    axis = np.argmax(np.abs(n), axis=1)
    keep = np.array([[1, 2], [0, 2], [0, 1]])
    rows = np.arange(len(tri_a))[:, None, None]
    cols = keep[axis][:, None, :]
    a2 = tri_a[rows, np.arange(3)[None, :, None], cols]
    b2 = tri_b[rows, np.arange(3)[None, :, None], cols]
    # keep consistent orientation: flip one coordinate where normal < 0
    flip = n[np.arange(len(n)), axis] < 0
    a2[flip, :, 0], a2[flip, :, 1] = a2[flip, :, 1].copy(), a2[flip, :, 0].copy()
    b2[flip, :, 0], b2[flip, :, 1] = b2[flip, :, 1].copy(), b2[flip, :, 0].copy()
    return a2, b2


def _coplanar_interiors_overlap(tri_a, tri_b):
    """2D open-interior overlap: boundary-only contact does not count."""
    a2, b2 = _project_plane(tri_a, tri_b)

    def inside_strict(tris, pts):
        # point strictly inside a CCW or CW triangle
        s1 = orient2d_batch(tris[:, 0], tris[:, 1], pts)
        s2 = orient2d_batch(tris[:, 1], tris[:, 2], pts)
        s3 = orient2d_batch(tris[:, 2], tris[:, 0], pts)
        return ((s1 > 0) & (s2 > 0) & (s3 > 0)) | ((s1 < 0) & (s2 < 0) & (s3 < 0))

    hit = np.zeros(len(tri_a), bool)
    for k in range(3):
        hit |= inside_strict(a2, b2[:, k])
        hit |= inside_strict(b2, a2[:, k])
    # proper pairwise edge crossings
    for i in range(3):
        pa = a2[:, i]
        pb = a2[:, (i + 1) % 3]
        for j in range(3):
            qa = b2[:, j]
            qb = b2[:, (j + 1) % 3]
            d1 = orient2d_batch(pa, pb, qa).astype(np.int32) * orient2d_batch(pa, pb, qb)
            d2 = orient2d_batch(qa, qb, pa).astype(np.int32) * orient2d_batch(qa, qb, pb)
            hit |= (d1 < 0) & (d2 < 0)
    return hit


def triangles_intersect(tri_a, tri_b):
    """Exact intersection classification for triangle pairs.

    tri_a/tri_b are (N, 3, 3). Transversal contact (including touching)
    counts as intersection; coplanar pairs intersect only when their
    interiors overlap, so coplanar shared-edge or shared-vertex contact is
    not an intersection.
    """
    tri_a = np.asarray(tri_a, np.float64)
    tri_b = np.asarray(tri_b, np.float64)
    n = len(tri_a)
    if n == 0:
        return np.zeros(0, bool)
    result = np.zeros(n, bool)
    coplanar_all = np.ones(n, bool)
    for i in range(3):
        a = tri_a[:, i]
        b = tri_a[:, (i + 1) % 3]
        cross, cop = _segment_crosses_triangle(a, b, tri_b[:, 0], tri_b[:, 1], tri_b[:, 2])
        result |= cross
        coplanar_all &= cop
    for i in range(3):
        a = tri_b[:, i]
        b = tri_b[:, (i + 1) % 3]
        cross, cop = _segment_crosses_triangle(a, b, tri_a[:, 0], tri_a[:, 1], tri_a[:, 2])
        result |= cross
        coplanar_all &= cop
    cop_idx = np.flatnonzero(coplanar_all & ~result)
    if len(cop_idx):
        result[cop_idx] = _coplanar_interiors_overlap(tri_a[cop_idx], tri_b[cop_idx])
    return result


def triangle_quality(positions, faces):
    """Per-face circumradius / (2 * inradius); 1 for equilateral.

    Degenerate faces get +inf.
    """
    p = positions[faces]
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    s = 0.5 * (a + b + c)
    with np.errstate(divide="ignore", invalid="ignore"):
        circum = a * b * c / (4.0 * area)
        inr = area / s
        q = circum / (2.0 * inr)
    q[~np.isfinite(q)] = np.inf
    q[area <= 0.0] = np.inf
    return q
