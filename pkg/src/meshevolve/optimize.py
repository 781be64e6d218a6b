"""Rotation-invariant Adam vertex optimizer and geometric step attenuation.

The second moment tracks the squared gradient *magnitude* per vertex (one
scalar, not per coordinate), so conjugating the gradients by a rotation
conjugates the update direction exactly. The displacement of a vertex is
capped by the length of its shortest incident edge (l_att), which keeps
faces from flipping over within a single step so folds stay detectable.
"""

import numpy as np

from .mesh import compute_normals, edge_lengths


class AdamState:
    """Per-vertex moments; arrays stay index-aligned with the vertex array."""

    def __init__(self, n_vertices, alpha=0.05, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros((n_vertices, 3))
        self.u = np.zeros(n_vertices)
        self.t = 0
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def __len__(self):
        return len(self.u)

    def step(self, gradients):
        """Advance the moments and return the update direction nu."""
        g = np.asarray(gradients, np.float64)
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient passed to the optimizer")
        if len(g) != len(self.u):
            raise ValueError("gradient length does not match optimizer state")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.u = self.beta2 * self.u + (1.0 - self.beta2) * np.einsum("ij,ij->i", g, g)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        u_hat = self.u / (1.0 - self.beta2 ** self.t)
        return m_hat / (np.sqrt(u_hat) + self.eps)[:, None]

    def drop(self, removed_mask):
        """Discard state rows for removed vertices (collapse survivor keeps its own)."""
        keep = ~removed_mask
        self.m = self.m[keep]
        self.u = self.u[keep]

    def select(self, index):
        self.m = self.m[index]
        self.u = self.u[index]

    def append_mean_of(self, parent_triples):
        """State for split-created vertices: mean of the three parents."""
        parent_triples = np.asarray(parent_triples, np.int64).reshape(-1, 3)
        if len(parent_triples):
            self.m = np.concatenate([self.m, self.m[parent_triples].mean(axis=1)])
            self.u = np.concatenate([self.u, self.u[parent_triples].mean(axis=1)])

    def copy(self):
        s = AdamState(0, self.alpha, self.beta1, self.beta2, self.eps)
        s.m = self.m.copy()
        s.u = self.u.copy()
        s.t = self.t
        return s


def compute_l_att(mesh):
    """Shortest incident edge length per vertex; recomputed every iteration."""
    adj = mesh.adjacency
    lengths = edge_lengths(mesh)
    l_att = np.full(mesh.n_vertices, np.inf)
    np.minimum.at(l_att, adj.edges[:, 0], lengths)
    np.minimum.at(l_att, adj.edges[:, 1], lengths)
    if np.isinf(l_att).any():
        raise ValueError("isolated vertex has no incident edge")
    return l_att


class ReferenceLength:
    """Running per-vertex reference length for the 'clc' attenuation mode.

    Starts as the mean incident edge length and relaxes toward the current
    mean by an exponential moving average, emulating the running coefficient
    of the prior attenuation scheme.
    """

    def __init__(self, mesh, decay=0.9):
        self.decay = decay
        self.value = self._mean_incident(mesh)

    @staticmethod
    def _mean_incident(mesh):
        adj = mesh.adjacency
        lengths = edge_lengths(mesh)
        acc = np.zeros(mesh.n_vertices)
        cnt = np.zeros(mesh.n_vertices)
        np.add.at(acc, adj.edges[:, 0], lengths)
        np.add.at(acc, adj.edges[:, 1], lengths)
        np.add.at(cnt, adj.edges[:, 0], 1.0)
        np.add.at(cnt, adj.edges[:, 1], 1.0)
        return acc / np.maximum(cnt, 1.0)

    def update(self, mesh):
        current = self._mean_incident(mesh)
        n = min(len(self.value), len(current))
        merged = current.copy()
        merged[:n] = self.decay * self.value[:n] + (1.0 - self.decay) * current[:n]
        self.value = merged
        return self.value


def move_vertices(mesh, gradients, state, mode="ours", l_ref=None):
    """One descent step: x <- x - alpha * nu * attenuation.

    mode 'ours' scales by l_att, 'clc' by the running reference length,
    'off' applies no attenuation (the ablation settings).
    """
    nu = state.step(gradients)
    if mode == "ours":
        att = compute_l_att(mesh)
    elif mode == "clc":
        if l_ref is None:
            raise ValueError("clc mode needs a ReferenceLength tracker")
        att = l_ref.update(mesh)
    elif mode == "off":
        att = np.ones(mesh.n_vertices)
    else:
        raise ValueError(f"unknown attenuation mode {mode!r}")
    return mesh.positions - state.alpha * att[:, None] * nu


def tangential_smooth(mesh, lam=0.5, vnormals=None):
    """Move vertices toward the area-weighted 1-ring centroid, tangentially.

    The normal component of the displacement is removed, so flat regions
    slide within their plane and the silhouette is untouched.
    """
    if lam == 0.0 or mesh.n_faces == 0:
        return mesh.positions.copy()
    from .mesh import face_normals

    if vnormals is None:
        _, vnormals, _ = compute_normals(mesh)
    _, areas, _ = face_normals(mesh, return_area=True)
    varea = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(varea, mesh.faces[:, k], areas / 3.0)

    adj = mesh.adjacency
    e = adj.edges
    pos = mesh.positions
    wsum = np.zeros(mesh.n_vertices)
    csum = np.zeros_like(pos)
    wa = varea[e[:, 0]]
    wb = varea[e[:, 1]]
    np.add.at(wsum, e[:, 0], wb)
    np.add.at(wsum, e[:, 1], wa)
    np.add.at(csum, e[:, 0], wb[:, None] * pos[e[:, 1]])
    np.add.at(csum, e[:, 1], wa[:, None] * pos[e[:, 0]])
    has = wsum > 1e-300
    centroid = np.where(has[:, None], csum / np.where(has, wsum, 1.0)[:, None], pos)
    delta = lam * (centroid - pos)
    delta -= vnormals * np.einsum("ij,ij->i", delta, vnormals)[:, None]
    return pos + delta
