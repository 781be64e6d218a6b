"""Procedural test and initialization shapes (icosphere, box, torus)."""

import numpy as np

from .mesh import IndexedMesh


def icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], np.int32)
    return IndexedMesh(verts, faces)


def icosphere(subdivisions=2, radius=1.0):
    """Unit icosphere by midpoint subdivision, projected to the sphere."""
    mesh = icosahedron()
    for _ in range(subdivisions):
        positions = list(mesh.positions)
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                p = 0.5 * (positions[i] + positions[j])
                p = p / np.linalg.norm(p)
                midpoint[key] = len(positions)
                positions.append(p)
            return midpoint[key]

        faces = []
        for a, b, c in mesh.faces:
            ab = mid(a, b)
            bc = mid(b, c)
            ca = mid(c, a)
            faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        mesh = IndexedMesh(np.asarray(positions), np.asarray(faces, np.int32))
    return IndexedMesh(mesh.positions * radius, mesh.faces)


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)):
    """Axis-aligned box, 12 CCW triangles."""
    sx, sy, sz = np.asarray(size, np.float64) / 2.0
    cx, cy, cz = center
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    v += np.array([cx, cy, cz])
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x- x+
        (0, 4, 5, 1), (2, 3, 7, 6),  # y- y+
        (0, 2, 6, 4), (1, 5, 7, 3),  # z- z+
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [[a, b, c], [a, c, d]]
    return IndexedMesh(v, np.asarray(faces, np.int32))


def torus(major=0.7, minor=0.3, n_major=48, n_minor=24):
    """Closed torus around the z axis (genus 1)."""
    u = np.arange(n_major) * (2 * np.pi / n_major)
    v = np.arange(n_minor) * (2 * np.pi / n_minor)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (major + minor * np.cos(vv)) * np.cos(uu)
    y = (major + minor * np.cos(vv)) * np.sin(uu)
    z = minor * np.sin(vv)
    verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)

    def vid(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            faces += [[a, b, c], [a, c, d]]
    return IndexedMesh(verts, np.asarray(faces, np.int32))


def plane_grid(n=8, size=2.0, z=0.0):
    """Regular triangulated square grid in the z plane, normals +z."""
    xs = np.linspace(-size / 2, size / 2, n + 1)
    vx, vy = np.meshgrid(xs, xs, indexing="ij")
    verts = np.stack([vx, vy, np.full_like(vx, z)], axis=-1).reshape(-1, 3)

    def vid(i, j):
        return i * (n + 1) + j

    faces = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            faces += [[a, b, c], [a, c, d]]
    return IndexedMesh(verts, np.asarray(faces, np.int32))
