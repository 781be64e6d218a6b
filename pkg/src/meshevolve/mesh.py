"""Indexed triangle mesh: storage, adjacency, normals, manifoldness checks.

Everything downstream (losses, topology edits, metrics) works on this
representation. Edges are identified by their unordered vertex pair; there is
no half-edge structure, adjacency maps are rebuilt from the face array and are
deterministic functions of it.
"""

import numpy as np


class IndexedMesh:
    """Triangle mesh as (V, 3) float64 positions and (F, 3) int32 faces.

    Faces are counter-clockwise when viewed from outside. Adjacency caches
    are built lazily and are always a pure function of ``faces``.
    """

    def __init__(self, positions, faces):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(faces, dtype=np.int32).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.positions)):
            raise ValueError("face index out of range")
        self._adj = None

    @property
    def n_vertices(self):
        return len(self.positions)

    @property
    def n_faces(self):
        return len(self.faces)

    def copy(self):
        return IndexedMesh(self.positions.copy(), self.faces.copy())

    @property
    def adjacency(self):
        if self._adj is None:
            self._adj = build_adjacency(self.faces, self.n_vertices)
        return self._adj

    def invalidate(self):
        """Drop cached adjacency (call after mutating faces in place)."""
        self._adj = None

    def bounding_box(self):
        return self.positions.min(axis=0), self.positions.max(axis=0)


class Adjacency:
    """Edge list plus edge->face and vertex->face incidence maps.

    ``edges`` is (E, 2) with each row sorted (lo, hi) and rows in
    lexicographic order. ``edge_faces`` lists incident face ids per edge in
    ascending order; ``vertex_faces`` likewise per vertex.
    """

    def __init__(self, edges, edge_faces, vertex_faces, edge_face_count, face_edges):
        self.edges = edges
        self.edge_faces = edge_faces
        self.vertex_faces = vertex_faces
        self.edge_face_count = edge_face_count
        self.face_edges = face_edges
        self._edge_index = None

    @property
    def n_edges(self):
        return len(self.edges)

    def edge_id(self, a, b):
        if self._edge_index is None:
            self._edge_index = {(int(lo), int(hi)): i for i, (lo, hi) in enumerate(self.edges)}
        return self._edge_index.get((min(a, b), max(a, b)), -1)

    def boundary_edge_mask(self):
        return self.edge_face_count == 1


def build_adjacency(faces, n_vertices):
    """Build deterministic adjacency caches for a face array.

    Non-manifold configurations are recorded (edge_face_count > 2), not
    rejected.
    """
    F = len(faces)
    if F == 0:
        return Adjacency(np.zeros((0, 2), np.int32), [], [[] for _ in range(n_vertices)],
                         np.zeros(0, np.int32), np.zeros((0, 3), np.int32))
    # every face contributes 3 unordered edges
    raw = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    raw_sorted = np.sort(raw, axis=1)
    edges, inverse, counts = np.unique(raw_sorted, axis=0, return_inverse=True, return_counts=True)
    face_edges = inverse.reshape(3, F).T.astype(np.int32)

    edge_faces = [[] for _ in range(len(edges))]
    fid3 = np.tile(np.arange(F, dtype=np.int32), 3)
    order = np.lexsort((fid3, inverse))
    for k in order:
        edge_faces[inverse[k]].append(int(fid3[k]))

    vertex_faces = [[] for _ in range(n_vertices)]
    flat = faces.reshape(-1)
    fids = np.repeat(np.arange(F, dtype=np.int32), 3)
    order = np.lexsort((fids, flat))
    for k in order:
        vertex_faces[flat[k]].append(int(fids[k]))

    return Adjacency(edges.astype(np.int32), edge_faces, vertex_faces,
                     counts.astype(np.int32), face_edges)


def face_normals(mesh, return_area=False):
    """Unit face normals from the CCW cross product.

    Zero-area faces get the flag normal (0,0,0) and are reported in the
    returned degenerate mask.
    """
    p = mesh.positions
    f = mesh.faces
    e1 = p[f[:, 1]] - p[f[:, 0]]
    e2 = p[f[:, 2]] - p[f[:, 0]]
    cross = np.cross(e1, e2)
    norm = np.linalg.norm(cross, axis=1)
    degenerate = norm < 1e-18
    safe = np.where(degenerate, 1.0, norm)
    normals = cross / safe[:, None]
    normals[degenerate] = 0.0
    if return_area:
        return normals, 0.5 * norm, degenerate
    return normals, degenerate


def vertex_normals(mesh, fnormals=None, areas=None):
    """Area-weighted vertex normals, renormalized.

    The area weighting uses the unnormalized cross product (2*area*n), so a
    single accumulation pass suffices. Vertices whose aggregate vanishes get
    the flag normal (0,0,0).
    """
    if fnormals is None or areas is None:
        fnormals, areas, _ = face_normals(mesh, return_area=True)
    weighted = fnormals * areas[:, None]
    acc = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], weighted)
    norm = np.linalg.norm(acc, axis=1)
    flagged = norm < 1e-18
    safe = np.where(flagged, 1.0, norm)
    out = acc / safe[:, None]
    out[flagged] = 0.0
    return out, flagged


def compute_normals(mesh):
    """Face and vertex normals together; returns (fn, vn, degenerate_faces)."""
    fn, area, degenerate = face_normals(mesh, return_area=True)
    vn, _ = vertex_normals(mesh, fn, area)
    return fn, vn, degenerate


def vertex_fan_components(faces_of_v, faces, v):
    """Group the faces incident to v into edge-connected fan components.

    Two incident faces are in the same component when they share an edge
    through v. Returns a list of face-id lists (deterministic order).
    """
    if not faces_of_v:
        return []
    # map: opposite vertex w -> faces containing edge (v, w)
    by_edge = {}
    for fid in faces_of_v:
        a, b, c = faces[fid]
        for w in (a, b, c):
            if w != v:
                by_edge.setdefault(int(w), []).append(fid)
    parent = {fid: fid for fid in faces_of_v}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for group in by_edge.values():
        for other in group[1:]:
            ra, rb = find(group[0]), find(other)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    comps = {}
    for fid in faces_of_v:
        comps.setdefault(find(fid), []).append(fid)
    return [comps[r] for r in sorted(comps)]


def manifold_report(mesh):
    """Topology summary used by the evaluation tables.

    An edge is non-manifold when more than 2 faces share it; a vertex when
    its incident faces do not form a single edge-connected fan. Percentages
    are relative to total edge / vertex counts.
    """
    adj = mesh.adjacency
    n_edges = adj.n_edges
    n_vertices = mesh.n_vertices
    nm_edges = int(np.count_nonzero(adj.edge_face_count > 2))
    n_boundary = int(np.count_nonzero(adj.edge_face_count == 1))

    nm_vertices = 0
    for v in range(n_vertices):
        fan = adj.vertex_faces[v]
        if not fan:
            continue
        if len(vertex_fan_components(fan, mesh.faces, v)) > 1:
            nm_vertices += 1

    # connected components over the vertex-edge graph (referenced vertices)
    referenced = np.zeros(n_vertices, bool)
    if mesh.n_faces:
        referenced[mesh.faces.reshape(-1)] = True
    parent = np.arange(n_vertices)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for a, b in adj.edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = {find(v) for v in range(n_vertices) if referenced[v]}

    return {
        "pct_nonmanifold_edges": 100.0 * nm_edges / n_edges if n_edges else 0.0,
        "pct_nonmanifold_vertices": 100.0 * nm_vertices / n_vertices if n_vertices else 0.0,
        "n_nonmanifold_edges": nm_edges,
        "n_nonmanifold_vertices": nm_vertices,
        "n_components": len(roots),
        "n_boundary_edges": n_boundary,
        "euler_characteristic": n_vertices - n_edges + mesh.n_faces,
    }


def is_clean_manifold(mesh):
    rep = manifold_report(mesh)
    return rep["n_nonmanifold_edges"] == 0 and rep["n_nonmanifold_vertices"] == 0


def split_nonmanifold_vertices(mesh):
    """Duplicate every non-manifold vertex once per extra fan component.

    Geometry is unchanged (duplicates sit at the same position). Requires
    manifold edges; vertex splitting alone cannot repair an edge shared by
    three or more faces.
    """
    adj = mesh.adjacency
    if np.any(adj.edge_face_count > 2):
        raise ValueError("mesh has non-manifold edges; split vertices cannot repair it")
    positions = [mesh.positions]
    faces = mesh.faces.copy()
    next_vid = mesh.n_vertices
    for v in range(mesh.n_vertices):
        fan = adj.vertex_faces[v]
        if not fan:
            continue
        comps = vertex_fan_components(fan, mesh.faces, v)
        for comp in comps[1:]:
            positions.append(mesh.positions[v][None, :])
            for fid in comp:
                faces[fid][faces[fid] == v] = next_vid
            next_vid += 1
    return IndexedMesh(np.concatenate(positions, axis=0), faces)


def drop_unreferenced_vertices(mesh):
    """Compact the vertex array to referenced vertices only."""
    if mesh.n_faces == 0:
        return IndexedMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int32)), np.array([], np.int64)
    used = np.unique(mesh.faces.reshape(-1))
    remap = np.full(mesh.n_vertices, -1, np.int64)
    remap[used] = np.arange(len(used))
    return IndexedMesh(mesh.positions[used], remap[mesh.faces]), used


def edge_lengths(mesh):
    adj = mesh.adjacency
    d = mesh.positions[adj.edges[:, 0]] - mesh.positions[adj.edges[:, 1]]
    return np.linalg.norm(d, axis=1)
