import numpy as np
import pytest

from meshevolve.geometry import (TriangleBvh, triangles_intersect,
                                 triangle_quality, orient3d_batch)
from meshevolve.shapes import icosphere, box

from conftest import random_soup


def brute_force_first_hit(tris, o, d, tmin=0.0):
    """Independent oracle: Moller-Trumbore over all triangles."""
    best_t, best_f = np.inf, -1
    for f, (a, b, c) in enumerate(tris):
        e1 = b - a
        e2 = c - a
        pvec = np.cross(d, e2)
        det = e1 @ pvec
        if abs(det) < 1e-14:
            continue
        inv = 1.0 / det
        tvec = o - a
        u = (tvec @ pvec) * inv
        if u < -1e-12 or u > 1 + 1e-12:
            continue
        qvec = np.cross(tvec, e1)
        v = (d @ qvec) * inv
        if v < -1e-12 or u + v > 1 + 1e-12:
            continue
        t = (e2 @ qvec) * inv
        if t > tmin and t < best_t:
            best_t, best_f = t, f
    return best_t, best_f


def test_ray_cast_matches_bruteforce(rng):
    m = icosphere(2)
    tris = m.positions[m.faces]
    bvh = TriangleBvh(tris)
    origins = rng.normal(size=(200, 3)) * 2.0
    dirs = rng.normal(size=(200, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    t, fid = bvh.ray_first_hit(origins, dirs, tmin=1e-9)
    for i in range(len(origins)):
        bt, bf = brute_force_first_hit(tris, origins[i], dirs[i], tmin=1e-9)
        if bf < 0:
            assert fid[i] == -1
        else:
            assert fid[i] >= 0
            assert t[i] == pytest.approx(bt, rel=1e-9, abs=1e-12)


def test_ray_cast_sphere_from_outside():
    m = icosphere(3)
    bvh = TriangleBvh(m.positions[m.faces])
    o = np.array([[3.0, 0.0, 0.0]])
    d = np.array([[-1.0, 0.0, 0.0]])
    t, fid = bvh.ray_first_hit(o, d)
    assert fid[0] >= 0
    assert t[0] == pytest.approx(2.0, abs=0.01)  # sphere radius 1


def test_closest_point_matches_bruteforce(rng):
    m = random_soup(rng, n_faces=40)
    tris = m.positions[m.faces]
    bvh = TriangleBvh(tris)
    queries = rng.normal(size=(100, 3)) * 1.5
    d, fid, pts = bvh.closest_points(queries)
    # oracle: dense sampling of each triangle
    w = np.linspace(0, 1, 60)
    bary = np.array([[a, b, 1 - a - b] for a in w for b in w if a + b <= 1.0])
    for i in range(len(queries)):
        dense = np.einsum("bk,fkj->fbj", bary, tris).reshape(-1, 3)
        ref = np.linalg.norm(dense - queries[i], axis=1).min()
        assert d[i] <= ref + 1e-9
        assert d[i] >= ref - 0.03  # dense-sampling resolution slack
        assert np.linalg.norm(pts[i] - queries[i]) == pytest.approx(d[i], abs=1e-12)


def test_closest_point_on_sphere():
    m = icosphere(3)
    bvh = TriangleBvh(m.positions[m.faces])
    d, fid, pts = bvh.closest_points(np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    assert d[0] == pytest.approx(1.0, abs=0.01)
    assert d[1] == pytest.approx(1.0, abs=0.01)  # center is ~radius away


def test_orient3d_signs():
    a = np.array([[0, 0, 0]], float)
    b = np.array([[1, 0, 0]], float)
    c = np.array([[0, 1, 0]], float)
    above = np.array([[0, 0, 1]], float)
    below = np.array([[0, 0, -1]], float)
    on = np.array([[0.3, 0.3, 0]], float)
    assert orient3d_batch(a, b, c, above)[0] == 1
    assert orient3d_batch(a, b, c, below)[0] == -1
    assert orient3d_batch(a, b, c, on)[0] == 0


def test_orient3d_exact_fallback_near_coplanar():
    # points constructed so the determinant underflows the float filter
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    c = np.array([[0.0, 1.0, 0.0]])
    d = np.array([[0.5, 0.5, 1e-300]])
    assert orient3d_batch(a, b, c, d)[0] == 1
    d = np.array([[0.5, 0.5, -1e-300]])
    assert orient3d_batch(a, b, c, d)[0] == -1


def test_triangles_intersect_crossing():
    t1 = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], float)
    t2 = np.array([[[0.2, 0.2, -0.5], [0.3, 0.2, 0.5], [0.25, 0.4, 0.5]]], float)
    assert triangles_intersect(t1, t2)[0]


def test_triangles_disjoint():
    t1 = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], float)
    t2 = t1 + np.array([0, 0, 1.0])
    assert not triangles_intersect(t1, t2)[0]


def test_coplanar_overlap_counts():
    t1 = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], float)
    t2 = np.array([[[0.1, 0.1, 0], [1.1, 0.1, 0], [0.1, 1.1, 0]]], float)
    assert triangles_intersect(t1, t2)[0]


def test_coplanar_shared_edge_touch_is_not_intersection():
    t1 = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], float)
    t2 = np.array([[[1, 0, 0], [0, 1, 0], [1, 1, 0]]], float)  # shares the diagonal
    assert not triangles_intersect(t1, t2)[0]


def test_coplanar_vertex_touch_is_not_intersection():
    t1 = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0]]], float)
    t2 = np.array([[[1, 0, 0], [2, 0, 0], [1, 1, 0]]], float)
    assert not triangles_intersect(t1, t2)[0]


def test_self_overlap_pairs_complete(rng):
    m = random_soup(rng, n_faces=25)
    tris = m.positions[m.faces]
    bvh = TriangleBvh(tris)
    pairs = set(map(tuple, bvh.self_overlap_pairs()))
    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    for i in range(len(tris)):
        for j in range(i + 1, len(tris)):
            if not ((lo[i] > hi[j]) | (lo[j] > hi[i])).any():
                assert (i, j) in pairs


def test_triangle_quality_values():
    pos = np.array([
        [0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0],   # equilateral
        [0, 0, 0], [1, 0, 0], [0, 1, 0],                  # right isosceles
    ])
    faces = np.array([[0, 1, 2], [3, 4, 5]])
    q = triangle_quality(pos, faces)
    assert q[0] == pytest.approx(1.0, abs=1e-12)
    # analytic: R = sqrt(2)/2, r = (2 - sqrt(2))/2, q = R / (2 r)
    expected = (np.sqrt(2) / 2) / (2 * (2 - np.sqrt(2)) / 2)
    assert q[1] == pytest.approx(expected, abs=1e-12)


def test_triangle_quality_sliver_unbounded():
    qs = []
    for h in (0.1, 0.01, 0.001):
        pos = np.array([[0, 0, 0], [1, 0, 0], [0.5, h, 0]])
        qs.append(triangle_quality(pos, np.array([[0, 1, 2]]))[0])
    assert qs[0] < qs[1] < qs[2]
    pos = np.array([[0, 0, 0], [1, 0, 0], [0.5, 0, 0]])
    assert triangle_quality(pos, np.array([[0, 1, 2]]))[0] == np.inf
