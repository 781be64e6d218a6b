"""Connectivity edits: fold-driven collapse, edge flips, sqrt(3) splits.

Collapses use the subset strategy (an edge collapses onto one of its
endpoints) scored by vertex quadrics, processed through a priority queue
with stale-entry skipping and guarded by the link condition plus normal,
quality and local fold-count checks. Splits insert face barycenters, which
composes on arbitrary face subsets without breaking manifoldness.
"""

import heapq
import math

import numpy as np

from .cloud import planar_project
from .mesh import IndexedMesh, compute_normals, face_normals

_FOLD_EPS = 0.0  # strict n_N . n_f < 0 test


# ---------------------------------------------------------------------------
# fold estimator


def detect_folds(mesh, fnormals=None, vnormals=None):
    """Mask of faces whose normal opposes the mean of their vertex normals.

    Degenerate (zero-normal) faces count as folded; they carry no reliable
    orientation and should be collapsed away.
    """
    if fnormals is None or vnormals is None:
        fnormals, vnormals, _ = compute_normals(mesh)
    n_mean = vnormals[mesh.faces].mean(axis=1)
    dot = np.einsum("ij,ij->i", n_mean, fnormals)
    degenerate = np.einsum("ij,ij->i", fnormals, fnormals) < 0.5
    zero_mean = np.einsum("ij,ij->i", n_mean, n_mean) < 1e-30
    return (dot < _FOLD_EPS) | degenerate | zero_mean


# ---------------------------------------------------------------------------
# quadrics


def vertex_quadrics(mesh):
    """Per-vertex 4x4 plane quadrics, area weighted."""
    fn, area, _ = face_normals(mesh, return_area=True)
    d = -np.einsum("ij,ij->i", fn, mesh.positions[mesh.faces[:, 0]])
    plane = np.concatenate([fn, d[:, None]], axis=1)
    k = plane[:, :, None] * plane[:, None, :] * area[:, None, None]
    q = np.zeros((mesh.n_vertices, 4, 4))
    for i in range(3):
        np.add.at(q, mesh.faces[:, i], k)
    return q


def quadric_error(q, position):
    x = np.append(position, 1.0)
    return float(x @ q @ x)


# ---------------------------------------------------------------------------
# scalar helpers for the sequential edit loops (plain floats, not numpy)


def _sub(p, q):
    return (p[0] - q[0], p[1] - q[1], p[2] - q[2])


def _cross(u, v):
    return (u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0])


def _dot(u, v):
    return u[0] * v[0] + u[1] * v[1] + u[2] * v[2]


def _norm(u):
    return math.sqrt(_dot(u, u))


def _tri_quality_scalar(p0, p1, p2):
    a = _norm(_sub(p1, p2))
    b = _norm(_sub(p0, p2))
    c = _norm(_sub(p0, p1))
    area = 0.5 * _norm(_cross(_sub(p1, p0), _sub(p2, p0)))
    if area <= 0.0:
        return math.inf
    s = 0.5 * (a + b + c)
    return a * b * c * s / (8.0 * area * area)


class MeshEditor:
    """Mutable adjacency view for the sequential collapse/flip loops.

    Faces are tombstoned rather than removed; ``export`` compacts alive
    faces and referenced vertices back into an IndexedMesh together with the
    vertex index map (for optimizer-state bookkeeping).
    """

    def __init__(self, mesh):
        self.positions = mesh.positions.copy()
        self.faces = [tuple(int(v) for v in f) for f in mesh.faces]
        self.alive = [True] * len(self.faces)
        self.v2f = [set() for _ in range(len(self.positions))]
        for fid, (a, b, c) in enumerate(self.faces):
            self.v2f[a].add(fid)
            self.v2f[b].add(fid)
            self.v2f[c].add(fid)
        self.version = [0] * len(self.positions)
        self.n_alive = len(self.faces)

    def pos(self, v):
        p = self.positions[v]
        return (p[0], p[1], p[2])

    def edge_faces(self, a, b):
        return sorted(self.v2f[a] & self.v2f[b])

    def neighbors(self, v):
        out = set()
        for fid in self.v2f[v]:
            out.update(self.faces[fid])
        out.discard(v)
        return out

    def valence(self, v):
        return len(self.neighbors(v))

    def is_boundary_vertex(self, v):
        for fid in self.v2f[v]:
            a, b, c = self.faces[fid]
            for w in (a, b, c):
                if w != v and len(self.v2f[v] & self.v2f[w]) == 1:
                    return True
        return False

    def face_normal(self, fid, remap=None, skip=None):
        a, b, c = self.faces[fid]
        if remap:
            a = remap.get(a, a)
            b = remap.get(b, b)
            c = remap.get(c, c)
        n = _cross(_sub(self.pos(b), self.pos(a)), _sub(self.pos(c), self.pos(a)))
        return n

    def vertex_normal_local(self, v, remap=None, dead=None):
        """Area-weighted vertex normal under a virtual remap (no mutation)."""
        acc = [0.0, 0.0, 0.0]
        for fid in sorted(self.v2f[v]):
            if dead and fid in dead:
                continue
            n = self.face_normal(fid, remap)
            acc[0] += n[0]
            acc[1] += n[1]
            acc[2] += n[2]
        return tuple(acc)

    def _face_folded(self, fid, remap=None, dead=None, nrm_cache=None):
        nf = self.face_normal(fid, remap)
        l2 = _dot(nf, nf)
        if l2 < 1e-36:
            return True
        total = [0.0, 0.0, 0.0]
        for v in self.faces[fid]:
            v = remap.get(v, v) if remap else v
            if nrm_cache is not None and v in nrm_cache:
                n = nrm_cache[v]
            else:
                n = self.vertex_normal_local(v, remap, dead)
                if nrm_cache is not None:
                    nrm_cache[v] = n
            total[0] += n[0]
            total[1] += n[1]
            total[2] += n[2]
        if _dot(total, total) < 1e-60:
            return True
        return _dot(total, nf) < _FOLD_EPS

    def _region_fold_count(self, fids, remap=None, dead=None):
        cache = {}
        count = 0
        for fid in fids:
            if dead and fid in dead:
                continue
            if not self.alive[fid]:
                continue
            if self._face_folded(fid, remap, dead, cache):
                count += 1
        return count

    def check_collapse(self, a, b, q_max=20.0, guard_folds=True):
        """Validate collapsing a onto b; returns None or a rejection reason."""
        if not self.v2f[a] or not self.v2f[b]:
            return "dead-vertex"
        dying = self.edge_faces(a, b)
        if not dying:
            return "no-edge"
        if len(dying) > 2:
            return "nonmanifold-edge"
        na = self.neighbors(a)
        nb = self.neighbors(b)
        common = na & nb
        opposite = set()
        for fid in dying:
            for w in self.faces[fid]:
                if w != a and w != b:
                    opposite.add(w)
        if common != opposite:
            return "link-condition"
        if len(dying) == 2 and self.is_boundary_vertex(a) and self.is_boundary_vertex(b):
            return "boundary-pinch"
        if self.n_alive - len(dying) < 4:
            return "too-few-faces"

        dying_set = set(dying)
        remap = {a: b}
        pos_b = self.pos(b)
        b_face_keys = {tuple(sorted(self.faces[fid])) for fid in self.v2f[b]
                       if fid not in dying_set}
        for fid in sorted(self.v2f[a]):
            if fid in dying_set:
                continue
            va, vb, vc = self.faces[fid]
            new = tuple(b if v == a else v for v in (va, vb, vc))
            if tuple(sorted(new)) in b_face_keys:
                return "duplicate-face"
            old_n = self.face_normal(fid)
            new_n = self.face_normal(fid, remap)
            if _dot(new_n, new_n) < 1e-36:
                return "degenerate-face"
            if _dot(old_n, new_n) <= 0.0:
                return "normal-flip"
            p = [self.pos(v) for v in new]
            if _tri_quality_scalar(*p) > q_max:
                return "quality"

        if guard_folds:
            region_verts = {b} | na
            region = set()
            for v in region_verts:
                region.update(self.v2f[v])
            region = sorted(region)
            before = self._region_fold_count(region)
            after = self._region_fold_count(region, remap, dying_set)
            if after > before:
                return "fold-increase"
        return None

    def collapse(self, a, b):
        """Apply collapse a->b (validation is the caller's job)."""
        dying = self.edge_faces(a, b)
        dying_set = set(dying)
        for fid in dying:
            for v in self.faces[fid]:
                self.v2f[v].discard(fid)
            self.alive[fid] = False
        self.n_alive -= len(dying)
        moved = [fid for fid in sorted(self.v2f[a])]
        for fid in moved:
            va, vb, vc = self.faces[fid]
            self.faces[fid] = tuple(b if v == a else v for v in (va, vb, vc))
            self.v2f[b].add(fid)
        self.v2f[a] = set()
        touched = {a, b}
        for fid in moved:
            touched.update(self.faces[fid])
        for fid in dying:
            touched.update(self.faces[fid])
        for v in touched:
            self.version[v] += 1

    def flip(self, a, b, dihedral_cos, boundary_flags, q_max=None):
        """Try to flip interior edge (a, b); returns True when applied."""
        shared = self.edge_faces(a, b)
        if len(shared) != 2:
            return False
        f1, f2 = shared
        # identify opposite vertices and orientation: f1 holds directed a->b
        t1 = self.faces[f1]
        t2 = self.faces[f2]
        if not _has_directed(t1, a, b):
            f1, f2 = f2, f1
            t1, t2 = t2, t1
            if not _has_directed(t1, a, b):
                return False
        c = _opposite(t1, a, b)
        d = _opposite(t2, a, b)
        if c is None or d is None or c == d:
            return False
        if self.v2f[c] & self.v2f[d]:
            return False  # flipped edge already exists
        # valence balancing
        def target(v):
            return 4 if boundary_flags[v] else 6

        va, vb, vc, vd = (self.valence(x) for x in (a, b, c, d))
        before = ((va - target(a)) ** 2 + (vb - target(b)) ** 2
                  + (vc - target(c)) ** 2 + (vd - target(d)) ** 2)
        after = ((va - 1 - target(a)) ** 2 + (vb - 1 - target(b)) ** 2
                 + (vc + 1 - target(c)) ** 2 + (vd + 1 - target(d)) ** 2)
        if after >= before:
            return False
        # dihedral guard
        n1 = self.face_normal(f1)
        n2 = self.face_normal(f2)
        l1 = _norm(n1)
        l2 = _norm(n2)
        if l1 < 1e-18 or l2 < 1e-18:
            return False
        if _dot(n1, n2) / (l1 * l2) < dihedral_cos:
            return False
        avg = (n1[0] / l1 + n2[0] / l2, n1[1] / l1 + n2[1] / l2, n1[2] / l1 + n2[2] / l2)
        # new faces (c, a, d) and (d, b, c)
        pa, pb, pc, pd = (self.pos(x) for x in (a, b, c, d))
        m1 = _cross(_sub(pa, pc), _sub(pd, pc))
        m2 = _cross(_sub(pb, pd), _sub(pc, pd))
        if _dot(m1, m1) < 1e-36 or _dot(m2, m2) < 1e-36:
            return False
        if _dot(m1, avg) <= 0.0 or _dot(m2, avg) <= 0.0:
            return False
        if q_max is not None:
            if (_tri_quality_scalar(pc, pa, pd) > q_max
                    or _tri_quality_scalar(pd, pb, pc) > q_max):
                return False
        for v in t1:
            self.v2f[v].discard(f1)
        for v in t2:
            self.v2f[v].discard(f2)
        self.faces[f1] = (c, a, d)
        self.faces[f2] = (d, b, c)
        for v in self.faces[f1]:
            self.v2f[v].add(f1)
        for v in self.faces[f2]:
            self.v2f[v].add(f2)
        for v in (a, b, c, d):
            self.version[v] += 1
        return True

    def export(self):
        """Compact to an IndexedMesh; returns (mesh, kept_vertex_indices)."""
        faces = [self.faces[fid] for fid in range(len(self.faces)) if self.alive[fid]]
        if faces:
            fa = np.asarray(faces, np.int64)
            used = np.unique(fa.reshape(-1))
        else:
            fa = np.zeros((0, 3), np.int64)
            used = np.zeros(0, np.int64)
        remap = np.full(len(self.positions), -1, np.int64)
        remap[used] = np.arange(len(used))
        return IndexedMesh(self.positions[used], remap[fa]), used


def _has_directed(tri, a, b):
    for k in range(3):
        if tri[k] == a and tri[(k + 1) % 3] == b:
            return True
    return False


def _opposite(tri, a, b):
    for v in tri:
        if v != a and v != b:
            return v
    return None


# ---------------------------------------------------------------------------
# collapse rounds


def _collapse_round(mesh, state, candidate_edges, q_max, guard_folds,
                    budget=None, lazy_requeue=False):
    """Shared priority-queue collapse loop.

    candidate_edges: iterable of undirected (a, b). Both collapse directions
    are scored. Returns (mesh', n_collapsed); state rows are compacted in
    place when state is given.
    """
    editor = MeshEditor(mesh)
    quadrics = vertex_quadrics(mesh)

    def cost(a, b):
        x = np.append(editor.positions[b], 1.0)
        return float(x @ (quadrics[a] + quadrics[b]) @ x)

    heap = []
    seen = set()
    for a, b in candidate_edges:
        for src, dst in ((a, b), (b, a)):
            if (src, dst) in seen:
                continue
            seen.add((src, dst))
            heapq.heappush(heap, (cost(src, dst), src, dst,
                                  editor.version[src], editor.version[dst]))
    applied = 0
    while heap:
        if budget is not None and editor.n_alive <= budget:
            break
        c, a, b, va, vb = heapq.heappop(heap)
        if editor.version[a] != va or editor.version[b] != vb:
            if lazy_requeue and editor.v2f[a] and editor.v2f[b] \
                    and editor.edge_faces(a, b):
                heapq.heappush(heap, (cost(a, b), a, b,
                                      editor.version[a], editor.version[b]))
            continue
        if editor.check_collapse(a, b, q_max=q_max, guard_folds=guard_folds) is None:
            editor.collapse(a, b)
            applied += 1
    new_mesh, kept = editor.export()
    if state is not None and applied:
        state.select(kept)
    return new_mesh, applied


def qslim_collapse_folded(mesh, state=None, q_max=20.0, fold_mask=None):
    """Collapse edges of folded faces in ascending quadric-cost order.

    Candidates that would break manifoldness, flip a surviving normal,
    create a sliver worse than q_max, or locally increase the fold count
    are rejected. No valid candidates leaves the mesh unchanged.
    """
    if fold_mask is None:
        fold_mask = detect_folds(mesh)
    if not fold_mask.any():
        return mesh, 0
    adj = mesh.adjacency
    edge_ids = np.unique(adj.face_edges[fold_mask].reshape(-1))
    candidates = [tuple(int(v) for v in adj.edges[e]) for e in edge_ids]
    return _collapse_round(mesh, state, candidates, q_max, guard_folds=True)


def decimate_to_budget(mesh, target_faces, state=None, q_max=20.0):
    """Qslim subset decimation until the face budget is met.

    Quality and normal guards are relaxed in stages if the queue drains
    before the budget is reached; the link condition always holds so the
    output stays manifold.
    """
    stages = (q_max, math.inf)
    out = mesh
    for stage_q in stages:
        if out.n_faces <= target_faces:
            break
        adj = out.adjacency
        candidates = [tuple(int(v) for v in e) for e in adj.edges]
        out, _ = _collapse_round(out, state, candidates, stage_q,
                                 guard_folds=False, budget=target_faces,
                                 lazy_requeue=True)
    return out


# ---------------------------------------------------------------------------
# edge flips


def flip_edges(mesh, state=None, dihedral_threshold_deg=10.0, q_max=None):
    """One deterministic valence-balancing flip pass over interior edges.

    An edge flips when the flip strictly lowers the squared valence excess
    of the four involved vertices, the edge is flatter than the dihedral
    threshold, the flipped edge does not already exist, and no face normal
    flips. Vertex count is unchanged, so optimizer state is untouched.
    """
    editor = MeshEditor(mesh)
    adj = mesh.adjacency
    boundary = np.zeros(mesh.n_vertices, bool)
    bmask = adj.edge_face_count == 1
    if bmask.any():
        boundary[np.unique(adj.edges[bmask].reshape(-1))] = True
    dihedral_cos = math.cos(math.radians(dihedral_threshold_deg))
    applied = 0
    for a, b in adj.edges:
        if editor.flip(int(a), int(b), dihedral_cos, boundary, q_max=q_max):
            applied += 1
    if applied == 0:
        return mesh, 0
    new_mesh, kept = editor.export()
    # flips never change the vertex set
    if state is not None and len(kept) != mesh.n_vertices:
        state.select(kept)
    return new_mesh, applied


# ---------------------------------------------------------------------------
# supersampling and face scores


def supersample_lattice(n):
    """Barycentric lattice for a regular n^2 subdivision of a triangle.

    Returns (bary (M, 3), sub_faces (n^2, 3)) with M = (n+1)(n+2)/2 and
    sub-face indices into the lattice; orientation follows the parent.
    """
    index = {}
    bary = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            index[(i, j)] = len(bary)
            bary.append(((n - i - j) / n, i / n, j / n))
    tris = []
    for i in range(n):
        for j in range(n - i):
            tris.append((index[(i, j)], index[(i + 1, j)], index[(i, j + 1)]))
            if i + j <= n - 2:
                tris.append((index[(i + 1, j)], index[(i + 1, j + 1)], index[(i, j + 1)]))
    return np.asarray(bary, np.float64), np.asarray(tris, np.int64)


def supersample_faces(mesh, n, vnormals=None):
    """Regularly subdivide every face into n^2 equal-area sub-triangles.

    Sub-vertex normals interpolate the parent corner vertex normals and are
    renormalized. Returns a dict with flat arrays: points, normals,
    sub_faces (global indices), parent (per sub-face), n_sub_vertices
    per face.
    """
    if n < 1:
        raise ValueError("subdivision degree must be >= 1")
    if vnormals is None:
        _, vnormals, _ = compute_normals(mesh)
    bary, tris = supersample_lattice(n)
    F = mesh.n_faces
    M = len(bary)
    corner_pos = mesh.positions[mesh.faces]      # (F, 3, 3)
    corner_nrm = vnormals[mesh.faces]
    pts = np.einsum("mk,fkj->fmj", bary, corner_pos).reshape(F * M, 3)
    nrm = np.einsum("mk,fkj->fmj", bary, corner_nrm).reshape(F * M, 3)
    ln = np.linalg.norm(nrm, axis=1)
    nrm = nrm / np.where(ln > 1e-18, ln, 1.0)[:, None]
    offsets = (np.arange(F, dtype=np.int64) * M)[:, None, None]
    sub_faces = (tris[None, :, :] + offsets).reshape(F * len(tris), 3)
    parent = np.repeat(np.arange(F, dtype=np.int64), len(tris))
    return {"points": pts, "normals": nrm, "sub_faces": sub_faces,
            "parent": parent, "per_face_vertices": M, "bary": bary,
            "degree": n}


def _patch_curvature(points, sub_faces, parent, invalid_vertex, n_faces):
    """C(f) per sub-face on the projected patches, pooled per parent."""
    e1 = points[sub_faces[:, 1]] - points[sub_faces[:, 0]]
    e2 = points[sub_faces[:, 2]] - points[sub_faces[:, 0]]
    cross = np.cross(e1, e2)
    cl = np.linalg.norm(cross, axis=1)
    ok = cl > 1e-18
    fn = cross / np.where(ok, cl, 1.0)[:, None]

    vn = np.zeros_like(points)
    for k in range(3):
        np.add.at(vn, sub_faces[:, k], cross)  # area weighting within patch
    vl = np.linalg.norm(vn, axis=1)
    vn = vn / np.where(vl > 1e-18, vl, 1.0)[:, None]

    n_mean = vn[sub_faces].mean(axis=1)
    ml = np.linalg.norm(n_mean, axis=1)
    m_ok = ml > 1e-18
    n_mean = n_mean / np.where(m_ok, ml, 1.0)[:, None]
    dot = np.einsum("ij,ij->i", n_mean, fn)

    tainted = invalid_vertex[sub_faces].any(axis=1)
    c = np.where(ok & m_ok & ~tainted & (dot > 0.0), 1.0 - dot, 0.0)
    folded = ok & m_ok & ~tainted & (dot < 0.0)
    scores = np.zeros(n_faces)
    np.add.at(scores, parent, c)
    return scores, folded


def face_score(mesh, cloud, n=3, k=5, vnormals=None, projector=None,
               eps_denom=1e-3, d_max_factor=4.0, weighting="distance"):
    """FS(f): summed curvature proxy of the planar-projected supersamples.

    Each face is supersampled, every sub-vertex projected onto the target
    (planar projection along its interpolated normal, or a custom projector
    such as an SDF level-set projection), and 1 - n_N.n_f pooled over the
    projected sub-faces. Flat targets give 0; folded projections contribute
    0 but are flagged.
    """
    sup = supersample_faces(mesh, n, vnormals)
    if projector is not None:
        proj, flagged = projector(sup["points"], sup["normals"])
    else:
        proj, flagged, _ = planar_project(
            cloud, sup["points"], sup["normals"], k,
            eps_denom=eps_denom, d_max_factor=d_max_factor, weighting=weighting)
    scores, folded = _patch_curvature(proj, sup["sub_faces"], sup["parent"],
                                      flagged, mesh.n_faces)
    return scores


def max_dist_score(mesh, cloud, n=3, vnormals=None):
    """Ablation score: max distance of supersamples to the target samples."""
    sup = supersample_faces(mesh, n, vnormals)
    dist, _ = cloud.knn(sup["points"], 1)
    dist = dist.reshape(mesh.n_faces, sup["per_face_vertices"])
    return dist.max(axis=1)


def select_split_set(scores, budget, current_face_count, top_fraction=0.1,
                     fs_min=0.05):
    """Faces to split: highest scores above fs_min, capped by the budget.

    Ties resolve by lower face id; the result size k satisfies
    current_face_count + 2k <= budget.
    """
    scores = np.asarray(scores, np.float64)
    eligible = np.flatnonzero(scores > fs_min)
    if not len(eligible):
        return np.zeros(0, np.int64)
    order = np.lexsort((eligible, -scores[eligible]))
    ranked = eligible[order]
    take = int(top_fraction * current_face_count)
    take = min(take, len(ranked))
    room = max(0, (int(budget) - int(current_face_count)) // 2)
    take = min(take, room)
    return np.sort(ranked[:take]).astype(np.int64)


def sqrt3_split(mesh, faces_to_split, state=None):
    """Insert a barycenter vertex into each listed face (sqrt(3) scheme).

    Each split face becomes three; the new vertex's optimizer state is the
    mean of its three parents. Duplicate face ids are an error.
    """
    faces_to_split = np.asarray(faces_to_split, np.int64).reshape(-1)
    if len(faces_to_split) == 0:
        return mesh, 0
    if len(np.unique(faces_to_split)) != len(faces_to_split):
        raise ValueError("duplicate face ids in split set")
    if faces_to_split.min() < 0 or faces_to_split.max() >= mesh.n_faces:
        raise ValueError("face id out of range")

    tri = mesh.faces[faces_to_split]
    centers = mesh.positions[tri].mean(axis=1)
    new_ids = mesh.n_vertices + np.arange(len(faces_to_split))
    positions = np.concatenate([mesh.positions, centers])

    keep = np.ones(mesh.n_faces, bool)
    keep[faces_to_split] = False
    new_faces = np.concatenate([
        np.stack([tri[:, 0], tri[:, 1], new_ids], axis=1),
        np.stack([tri[:, 1], tri[:, 2], new_ids], axis=1),
        np.stack([tri[:, 2], tri[:, 0], new_ids], axis=1),
    ])
    faces = np.concatenate([mesh.faces[keep], new_faces.astype(np.int32)])
    if state is not None:
        state.append_mean_of(tri)
    return IndexedMesh(positions, faces), len(faces_to_split)
