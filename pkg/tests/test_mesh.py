import numpy as np
import pytest

from meshevolve.mesh import (IndexedMesh, build_adjacency, compute_normals,
                             manifold_report, split_nonmanifold_vertices,
                             edge_lengths)
from meshevolve.shapes import icosphere, plane_grid

from conftest import two_tets_glued_at_vertex, bowtie


def test_single_triangle_adjacency():
    m = IndexedMesh(np.eye(3), [[0, 1, 2]])
    adj = m.adjacency
    assert adj.n_edges == 3
    assert (adj.edge_face_count == 1).all()


def test_tetrahedron_adjacency_euler():
    p = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
    f = [[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]]
    m = IndexedMesh(p, f)
    adj = m.adjacency
    assert adj.n_edges == 6
    assert (adj.edge_face_count == 2).all()
    assert m.n_vertices - adj.n_edges + m.n_faces == 2


def test_three_faces_on_one_edge_reported():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], float)
    faces = [[0, 1, 2], [0, 3, 1], [0, 1, 4]]
    m = IndexedMesh(pos, faces)
    adj = m.adjacency
    e = adj.edge_id(0, 1)
    assert adj.edge_face_count[e] == 3
    rep = manifold_report(m)
    assert rep["n_nonmanifold_edges"] == 1


def test_adjacency_pure_function():
    m = icosphere(1)
    a1 = build_adjacency(m.faces, m.n_vertices)
    a2 = build_adjacency(m.faces, m.n_vertices)
    assert np.array_equal(a1.edges, a2.edges)
    assert a1.edge_faces == a2.edge_faces
    assert a1.vertex_faces == a2.vertex_faces


def test_flat_triangle_normal():
    m = IndexedMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    fn, vn, deg = compute_normals(m)
    assert np.allclose(fn[0], [0, 0, 1])
    assert not deg.any()


def test_face_normal_orthogonal_to_edges(sphere2):
    fn, _, _ = compute_normals(sphere2)
    p = sphere2.positions[sphere2.faces]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    assert np.abs(np.einsum("ij,ij->i", fn, e1)).max() < 1e-6
    assert np.abs(np.einsum("ij,ij->i", fn, e2)).max() < 1e-6


def test_tetrahedron_vertex_normals_outward():
    p = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
    f = [[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]]
    m = IndexedMesh(p, f)
    _, vn, _ = compute_normals(m)
    center = p.mean(axis=0)
    assert all(vn[i] @ (p[i] - center) > 0 for i in range(4))


def test_icosphere_vertex_normals_match_sphere(sphere3):
    # analytic oracle: exact sphere normal is the unit position
    _, vn, _ = compute_normals(sphere3)
    exact = sphere3.positions / np.linalg.norm(sphere3.positions, axis=1)[:, None]
    cosang = np.einsum("ij,ij->i", vn, exact)
    assert np.degrees(np.arccos(np.clip(cosang, -1, 1))).max() < 5.0


def test_planar_patch_interior_normals_exact():
    m = plane_grid(6)
    _, vn, _ = compute_normals(m)
    assert np.allclose(vn, [0, 0, 1], atol=1e-12)


def test_degenerate_face_flagged():
    m = IndexedMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]],
                    [[0, 1, 2], [0, 1, 3]])
    fn, _, deg = compute_normals(m)
    assert deg[0] and not deg[1]
    assert np.allclose(fn[0], 0)


def test_manifold_report_icosphere(sphere2):
    rep = manifold_report(sphere2)
    assert rep["pct_nonmanifold_edges"] == 0
    assert rep["pct_nonmanifold_vertices"] == 0
    assert rep["n_components"] == 1
    assert rep["euler_characteristic"] == 2
    assert rep["n_boundary_edges"] == 0


def test_glued_tets_one_nonmanifold_vertex():
    m = two_tets_glued_at_vertex()
    rep = manifold_report(m)
    assert rep["n_nonmanifold_vertices"] == 1
    assert rep["n_nonmanifold_edges"] == 0


def test_split_glued_tets():
    m = two_tets_glued_at_vertex()
    out = split_nonmanifold_vertices(m)
    assert out.n_vertices == m.n_vertices + 1
    rep = manifold_report(out)
    assert rep["n_nonmanifold_vertices"] == 0
    assert rep["n_components"] == 2
    # geometry unchanged: duplicate at same position
    assert np.allclose(out.positions[-1], m.positions[0])


def test_split_already_manifold_is_identity(sphere2):
    out = split_nonmanifold_vertices(sphere2)
    assert out.n_vertices == sphere2.n_vertices
    assert np.array_equal(out.faces, sphere2.faces)


def test_split_bowtie():
    m = bowtie()
    out = split_nonmanifold_vertices(m)
    assert out.n_vertices == 6
    rep = manifold_report(out)
    assert rep["n_nonmanifold_vertices"] == 0


def test_split_idempotent():
    m = two_tets_glued_at_vertex()
    once = split_nonmanifold_vertices(m)
    twice = split_nonmanifold_vertices(once)
    assert np.array_equal(once.faces, twice.faces)
    assert np.array_equal(once.positions, twice.positions)


def test_split_rejects_nonmanifold_edges():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], float)
    faces = [[0, 1, 2], [0, 3, 1], [0, 1, 4]]
    m = IndexedMesh(pos, faces)
    with pytest.raises(ValueError):
        split_nonmanifold_vertices(m)


def test_edge_lengths_match_bruteforce(rng):
    m = icosphere(1)
    m.positions += rng.normal(scale=0.05, size=m.positions.shape)
    m.invalidate()
    lengths = edge_lengths(m)
    adj = m.adjacency
    for k in range(adj.n_edges):
        a, b = adj.edges[k]
        assert lengths[k] == pytest.approx(np.linalg.norm(m.positions[a] - m.positions[b]))
