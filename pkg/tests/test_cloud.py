import numpy as np
import pytest

from meshevolve.cloud import (OrientedPointCloud, planar_project,
                              planar_projection_loss, sample_surface,
                              symmetric_projection_losses, chamfer_pull_loss)
from meshevolve.mesh import compute_normals
from meshevolve.shapes import icosphere, box


def sphere_cloud(n, rng, radius=1.0):
    p = rng.normal(size=(n, 3))
    p /= np.linalg.norm(p, axis=1)[:, None]
    return OrientedPointCloud(p * radius, p)


def plane_cloud(n, rng, z=0.0, extent=2.0):
    xy = rng.uniform(-extent, extent, size=(n, 2))
    pts = np.column_stack([xy, np.full(n, z)])
    nrm = np.tile([0.0, 0.0, 1.0], (n, 1))
    return OrientedPointCloud(pts, nrm)


# ---------------------------------------------------------------------------
# knn


def test_knn_exact_point(rng):
    cloud = sphere_cloud(100, rng)
    d, idx = cloud.knn(cloud.points[17], 1)
    assert idx[0] == 17
    assert d[0] == 0.0


def test_knn_grid_cell_center():
    xs, ys = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
    pts = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(16)])
    cloud = OrientedPointCloud(pts, np.tile([0, 0, 1.0], (16, 1)))
    d, idx = cloud.knn(np.array([0.5, 0.5, 0.0]), 4)
    corners = {tuple(pts[i][:2]) for i in idx}
    assert corners == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert np.allclose(d, np.sqrt(0.5))


def test_knn_matches_linear_scan(rng):
    cloud = sphere_cloud(1000, rng)
    queries = rng.normal(size=(50, 3))
    d, idx = cloud.knn(queries, 5)
    for i, q in enumerate(queries):
        dist = np.linalg.norm(cloud.points - q, axis=1)
        order = np.argsort(dist, kind="stable")[:5]
        assert np.array_equal(np.sort(idx[i]), np.sort(order))
        assert np.allclose(np.sort(d[i]), dist[order])


def test_knn_k_too_large(rng):
    cloud = sphere_cloud(10, rng)
    with pytest.raises(ValueError):
        cloud.knn(np.zeros(3), 11)


# ---------------------------------------------------------------------------
# planar projection


def test_single_neighbor_plane_hit():
    cloud = OrientedPointCloud([[0.3, 0.0, 0.0]], [[0.0, 0.0, 1.0]])
    p, flagged, _ = planar_project(cloud, np.array([0.0, 0.0, 1.0]),
                                   np.array([0.0, 0.0, -1.0]), k=1)
    assert not flagged
    assert np.allclose(p, [0.0, 0.0, 0.0], atol=1e-12)


def test_on_surface_all_weights_zero_flagged(rng):
    cloud = plane_cloud(200, rng)
    v = np.array([0.1, -0.2, 0.0])  # on the plane
    p, flagged, _ = planar_project(cloud, v, np.array([0.0, 0.0, 1.0]), k=5)
    assert flagged
    assert np.allclose(p, v)
    loss, grad, _, _ = planar_projection_loss(cloud, v[None], np.array([[0, 0, 1.0]]), k=5)
    assert loss == 0.0
    assert np.allclose(grad, 0.0)


def test_corner_of_two_planes():
    # neighbors on planes z=0 and x=0; analytic: both supports have equal
    # offset, so P(v) is the ray/corner intersection, on the line x=z=0
    cloud = OrientedPointCloud(
        [[0.05, 0.02, 0.0], [0.0, -0.03, 0.08]],
        [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    v = np.array([0.3, 0.0, 0.3])
    n_v = np.array([-1.0, 0.0, -1.0]) / np.sqrt(2)
    p, flagged, _ = planar_project(cloud, v, n_v, k=2)
    assert not flagged
    assert abs(p[0]) < 1e-9 and abs(p[2]) < 1e-9


def test_k1_aligned_normal_is_orthogonal_projection(rng):
    k_pt = rng.normal(size=3)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    cloud = OrientedPointCloud(k_pt[None], n[None])
    v = rng.normal(size=3)
    p, flagged, _ = planar_project(cloud, v, n, k=1, d_max_factor=np.inf)
    expected = v - ((v - k_pt) @ n) * n
    assert np.allclose(p, expected, atol=1e-9)


def test_projection_rigid_invariance(rng):
    cloud_pts = rng.normal(size=(50, 3))
    cloud_nrm = rng.normal(size=(50, 3))
    cloud_nrm /= np.linalg.norm(cloud_nrm, axis=1)[:, None]
    v = rng.normal(size=3)
    n_v = rng.normal(size=3)
    n_v /= np.linalg.norm(n_v)
    p0, f0, _ = planar_project(OrientedPointCloud(cloud_pts, cloud_nrm), v, n_v, k=5)

    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta), 0],
                    [np.sin(theta), np.cos(theta), 0], [0, 0, 1.0]])
    shift = np.array([0.3, -1.2, 2.0])
    p1, f1, _ = planar_project(
        OrientedPointCloud(cloud_pts @ rot.T + shift, cloud_nrm @ rot.T),
        rot @ v + shift, rot @ n_v, k=5)
    assert f0 == f1
    assert np.allclose(p1, rot @ p0 + shift, atol=1e-9)


def test_loss_is_height_over_plane(rng):
    cloud = plane_cloud(4000, rng)
    h = 0.37
    v = np.array([[0.0, 0.0, h]])
    n_v = np.array([[0.0, 0.0, -1.0]])
    loss, grad, _, _ = planar_projection_loss(cloud, v, n_v, k=5)
    assert loss == pytest.approx(h, abs=1e-12)
    assert np.allclose(grad[0], [0.0, 0.0, 1.0], atol=1e-9)


def _fd_check(cloud, v, n_v, k, step=1e-5):
    loss0, grad, _, _ = planar_projection_loss(cloud, v[None], n_v[None], k=k)
    fd = np.zeros(3)
    for c in range(3):
        vp = v.copy()
        vp[c] += step
        lp, _, _, _ = planar_projection_loss(cloud, vp[None], n_v[None], k=k)
        vm = v.copy()
        vm[c] -= step
        lm, _, _, _ = planar_projection_loss(cloud, vm[None], n_v[None], k=k)
        fd[c] = (lp - lm) / (2 * step)
    denom = max(np.linalg.norm(fd), np.linalg.norm(grad[0]), 1e-12)
    return np.linalg.norm(fd - grad[0]) / denom


def test_gradient_matches_finite_differences(rng):
    cloud = sphere_cloud(2000, rng)
    failures = 0
    n_probes = 200
    for _ in range(n_probes):
        v = rng.normal(size=3)
        v *= (0.8 + 0.4 * rng.random()) / np.linalg.norm(v)
        n_v = v / np.linalg.norm(v) + 0.2 * rng.normal(size=3)
        n_v /= np.linalg.norm(n_v)
        if _fd_check(cloud, v, n_v, k=5) > 1e-4:
            failures += 1
    assert failures <= max(1, int(0.01 * n_probes))


def test_symmetric_losses_zero_lambdas(rng, sphere2):
    _, vn, _ = compute_normals(sphere2)
    cloud = sphere_cloud(500, rng)
    loss, grad, parts = symmetric_projection_losses(sphere2, vn, cloud, 0.0, 0.0)
    assert loss == 0.0
    assert np.count_nonzero(grad) == 0


def test_symmetric_losses_identical_spheres(rng, sphere3):
    _, vn, _ = compute_normals(sphere3)
    pts, nrm, _, _ = sample_surface(sphere3, 4000, rng)
    cloud = OrientedPointCloud(pts, nrm)
    loss, grad, parts = symmetric_projection_losses(
        sphere3, vn, cloud, 1.0, 1.0, rng=np.random.default_rng(7),
        n_reverse_samples=4000)
    # both directions nearly zero relative to the bbox diagonal (~2)
    assert parts["forward"] < 2e-3 * 2
    assert parts["reverse"] < 2e-3 * 2


def test_reverse_direction_gradients_flow(rng, sphere2):
    # target cube cloud vs source sphere: reverse term nonzero, gradient nonzero
    b = box((1.6, 1.6, 1.6))
    bn, _, _ = compute_normals(b)
    pts, nrm, _, _ = sample_surface(b, 3000, np.random.default_rng(3))
    cloud = OrientedPointCloud(pts, nrm)
    _, vn, _ = compute_normals(sphere2)
    loss, grad, parts = symmetric_projection_losses(
        sphere2, vn, cloud, 0.0, 1.0, rng=np.random.default_rng(5),
        n_reverse_samples=2000)
    assert parts["reverse"] > 0.01
    assert np.linalg.norm(grad) > 0


def test_chamfer_pull_loss(rng):
    cloud = plane_cloud(3000, rng)
    v = np.array([[0.0, 0.0, 0.5]])
    loss, grad = chamfer_pull_loss(cloud, v, k=5)
    assert loss == pytest.approx(0.5, abs=0.02)
    assert grad[0, 2] > 0


def test_sample_surface_statistics(rng):
    # unit square from 2 triangles; per-triangle counts binomial
    import meshevolve.mesh as mesh_mod
    sq = mesh_mod.IndexedMesh(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])
    n = 10000
    pts, nrm, fids, bary = sample_surface(sq, n, rng)
    c0 = np.count_nonzero(fids == 0)
    sigma = np.sqrt(n * 0.25)
    assert abs(c0 - n / 2) < 3 * sigma
    assert np.allclose(np.linalg.norm(nrm, axis=1), 1.0)
    assert (bary >= 0).all()
    assert pts[:, 0].min() >= 0 and pts[:, 0].max() <= 1


def test_sample_single_triangle_inside(rng):
    import meshevolve.mesh as mesh_mod
    tri = mesh_mod.IndexedMesh([[0, 0, 0], [2, 0, 0], [0, 2, 0]], [[0, 1, 2]])
    pts, _, fids, bary = sample_surface(tri, 500, rng)
    assert (fids == 0).all()
    assert (bary >= 0).all() and (bary <= 1).all()
    assert np.allclose(bary.sum(axis=1), 1.0)
