"""Oriented point clouds and the planar projection loss.

A query point v with unit normal n_v is projected along n_v onto the tangent
planes of its K nearest cloud samples; the supports are averaged with
distance-proportional weights. Because each support sits at v + d*n_v, the
projection always moves v along its own normal, and the per-vertex loss
||v - P(v)|| reduces to |sum_i w_i d_i| / sum_i w_i, which is what the
analytic gradients differentiate (KNN selection, neighbor planes and n_v are
held fixed within a step).
"""

import numpy as np
from scipy.spatial import cKDTree


class OrientedPointCloud:
    """Point positions plus unit normals with a KNN index."""

    def __init__(self, points, normals):
        self.points = np.ascontiguousarray(points, np.float64).reshape(-1, 3)
        self.normals = np.ascontiguousarray(normals, np.float64).reshape(-1, 3)
        if len(self.points) != len(self.normals):
            raise ValueError("points and normals must have matching length")
        norm = np.linalg.norm(self.normals, axis=1)
        bad = np.abs(norm - 1.0) > 1e-6
        if bad.any():
            safe = np.where(norm < 1e-18, 1.0, norm)
            self.normals = self.normals / safe[:, None]
        self._tree = cKDTree(self.points) if len(self.points) else None

    def __len__(self):
        return len(self.points)

    def knn(self, queries, k):
        """K nearest cloud points per query, ascending distance.

        Ties at equal distance resolve to the lower point index. Returns
        (distances, indices), each (Q, k).
        """
        if self._tree is None or k > len(self.points):
            raise ValueError("k exceeds cloud size")
        queries = np.asarray(queries, np.float64)
        single = queries.ndim == 1
        queries = queries.reshape(-1, 3)
        dist, idx = self._tree.query(queries, k=k)
        dist = dist.reshape(len(queries), k)
        idx = idx.reshape(len(queries), k)
        # deterministic ordering among returned neighbors
        order = np.lexsort((idx, dist), axis=1)
        rows = np.arange(len(queries))[:, None]
        dist = dist[rows, order]
        idx = idx[rows, order]
        if single:
            return dist[0], idx[0]
        return dist, idx


def _support_terms(v, n_v, pts, nrm, eps_denom, d_max_factor, nn_dist):
    """Per-neighbor signed offsets d and validity for a batch of queries.

    v (Q,3), n_v (Q,3), pts/nrm (Q,K,3), nn_dist (Q,K). d_max_factor caps
    |d| at a multiple of the median neighbor distance so that one grazing
    plane cannot dominate the average.
    """
    denom = np.einsum("qj,qkj->qk", n_v, nrm)
    valid = np.abs(denom) >= eps_denom
    safe = np.where(valid, denom, 1.0)
    d = np.einsum("qkj,qkj->qk", pts - v[:, None, :], nrm) / safe
    med = np.median(nn_dist, axis=1)
    valid &= np.abs(d) <= d_max_factor * med[:, None]
    d = np.where(valid, d, 0.0)
    return d, valid


def _weights(absd, mode):
    if mode == "distance":
        return absd, np.ones_like(absd)
    if mode == "inverse":
        w = 1.0 / (absd + 1e-9)
        return w, -w * w
    raise ValueError(f"unknown weighting mode {mode!r}")


def planar_project(cloud, v, n_v, k=5, eps_denom=1e-3, d_max_factor=4.0,
                   weighting="distance"):
    """Planar projection P(v) of query points along their normals.

    Returns (projected, flagged, info) where flagged marks queries whose
    supports were all invalid (their P(v) is v itself). info carries the
    per-neighbor terms for reuse by the loss.
    """
    v = np.asarray(v, np.float64)
    single = v.ndim == 1
    v = v.reshape(-1, 3)
    n_v = np.asarray(n_v, np.float64).reshape(-1, 3)
    nn_dist, idx = cloud.knn(v, k)
    pts = cloud.points[idx]
    nrm = cloud.normals[idx]
    d, valid = _support_terms(v, n_v, pts, nrm, eps_denom, d_max_factor, nn_dist)
    absd = np.abs(d)
    w, dw = _weights(absd, weighting)
    w = np.where(valid, w, 0.0)
    wsum = w.sum(axis=1)
    dsum = (w * d).sum(axis=1)
    flagged = (~valid.any(axis=1)) | (wsum <= 0.0)
    offset = np.where(flagged, 0.0, dsum / np.where(wsum > 0, wsum, 1.0))
    projected = v + offset[:, None] * n_v
    info = {
        "idx": idx, "d": d, "valid": valid, "w": w, "dw": dw,
        "wsum": wsum, "dsum": dsum, "flagged": flagged, "nrm": nrm,
        "denom": np.einsum("qj,qkj->qk", n_v, nrm), "offset": offset,
    }
    if single:
        return projected[0], bool(flagged[0]), info
    return projected, flagged, info


def _loss_terms_from_info(info, eps_denom):
    """Per-query loss |D|/W and d-space partials shared by both directions."""
    d = info["d"]
    valid = info["valid"]
    w = info["w"]
    dw = np.where(valid, info["dw"], 0.0)
    W = info["wsum"]
    D = info["dsum"]
    flagged = info["flagged"]
    live = ~flagged
    Wsafe = np.where(live, W, 1.0)
    loss = np.where(live, np.abs(D) / Wsafe, 0.0)
    sgn_d = np.sign(d)
    # dD/dd_i = w_i + dw_i * sign(d_i) * d_i ; dW/dd_i = dw_i * sign(d_i)
    dD_dd = w + dw * sgn_d * d
    dW_dd = dw * sgn_d
    sD = np.sign(D)[:, None]
    dl_dd = (sD * dD_dd / Wsafe[:, None]
             - (np.abs(D) / (Wsafe * Wsafe))[:, None] * dW_dd)
    dl_dd = np.where(valid & live[:, None], dl_dd, 0.0)
    return loss, dl_dd


def planar_projection_loss(cloud, v, n_v, k=5, eps_denom=1e-3, d_max_factor=4.0,
                           weighting="distance"):
    """Mean ||v - P(v)|| over queries and its gradient w.r.t. v.

    Flagged queries contribute 0. The gradient chains through d, the
    supports and the weights; neighbor planes and n_v are constants.
    """
    v = np.asarray(v, np.float64).reshape(-1, 3)
    n_v = np.asarray(n_v, np.float64).reshape(-1, 3)
    projected, flagged, info = planar_project(
        cloud, v, n_v, k, eps_denom, d_max_factor, weighting)
    loss_q, dl_dd = _loss_terms_from_info(info, eps_denom)
    # dd_i/dv = -n_k_i / (n_v . n_k_i)
    denom = info["denom"]
    safe = np.where(np.abs(denom) > 0, denom, 1.0)
    dd_dv = -info["nrm"] / safe[:, :, None]
    grad = np.einsum("qk,qkj->qj", dl_dd, dd_dv)
    n_q = max(len(v), 1)
    return float(loss_q.sum() / n_q), grad / n_q, projected, flagged


def projection_loss_to_neighbors(cloud_points, cloud_normals, queries, query_normals,
                                 k=5, eps_denom=1e-3, d_max_factor=4.0,
                                 weighting="distance"):
    """Projection loss of queries against a sampled surface, with gradients
    flowing to the *neighbor points* instead of the queries.

    Used for the reverse direction: queries are target cloud points, the
    "cloud" is a fresh sampling of the evolving source mesh, and the returned
    per-neighbor gradients are scattered to source vertices through the
    samples' barycentric coordinates.
    """
    tmp = OrientedPointCloud(cloud_points, cloud_normals)
    queries = np.asarray(queries, np.float64).reshape(-1, 3)
    query_normals = np.asarray(query_normals, np.float64).reshape(-1, 3)
    _, flagged, info = planar_project(
        tmp, queries, query_normals, k, eps_denom, d_max_factor, weighting)
    loss_q, dl_dd = _loss_terms_from_info(info, eps_denom)
    denom = info["denom"]
    safe = np.where(np.abs(denom) > 0, denom, 1.0)
    # dd_i/dk_i = +n_k_i / (n_v . n_k_i)
    dd_dk = info["nrm"] / safe[:, :, None]
    n_q = max(len(queries), 1)
    grad_k = dl_dd[:, :, None] * dd_dk / n_q
    return float(loss_q.sum() / n_q), info["idx"], grad_k


def sample_surface(mesh, n, rng, fnormals=None):
    """Area-uniform random samples on a mesh.

    Returns (points, normals, face_ids, barycentrics); normals are the
    parent face normals.
    """
    from .mesh import face_normals

    if fnormals is None:
        fnormals, areas, _ = face_normals(mesh, return_area=True)
    else:
        _, areas, _ = face_normals(mesh, return_area=True)
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has no area to sample")
    fids = rng.choice(len(areas), size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    s = np.sqrt(r1)
    bary = np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)
    tri = mesh.positions[mesh.faces[fids]]
    pts = np.einsum("nk,nkj->nj", bary, tri)
    return pts, fnormals[fids], fids, bary


def symmetric_projection_losses(mesh, vnormals, cloud, lam1=0.1, lam2=0.1, k=5,
                                rng=None, n_reverse_samples=10000,
                                reverse_query_cap=20000, eps_denom=1e-3,
                                d_max_factor=4.0, weighting="distance",
                                mode="planar"):
    """Both directions of the projection term of the total loss.

    Forward projects source vertices onto the target cloud; reverse samples
    the current source mesh (face normals as sample normals) and projects
    target points onto it, scattering gradients to the source vertices via
    the samples' barycentrics. Returns (loss, grad, parts).
    """
    grad = np.zeros_like(mesh.positions)
    parts = {"forward": 0.0, "reverse": 0.0}
    if lam1 == 0.0 and lam2 == 0.0:
        return 0.0, grad, parts

    if lam1 != 0.0:
        if mode == "planar":
            lf, gf, _, _ = planar_projection_loss(
                cloud, mesh.positions, vnormals, k,
                eps_denom=eps_denom, d_max_factor=d_max_factor, weighting=weighting)
        else:
            lf, gf = chamfer_pull_loss(cloud, mesh.positions, k)
        parts["forward"] = lf
        grad += lam1 * gf

    if lam2 != 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        pts, nrm, fids, bary = sample_surface(mesh, n_reverse_samples, rng)
        queries = cloud.points
        qnormals = cloud.normals
        if reverse_query_cap and len(queries) > reverse_query_cap:
            stride = int(np.ceil(len(queries) / reverse_query_cap))
            queries = queries[::stride]
            qnormals = qnormals[::stride]
        if mode == "planar":
            lr, idx, grad_k = projection_loss_to_neighbors(
                pts, nrm, queries, qnormals, k,
                eps_denom=eps_denom, d_max_factor=d_max_factor, weighting=weighting)
        else:
            lr, idx, grad_k = chamfer_pull_to_neighbors(pts, queries, k=1)
        parts["reverse"] = lr
        # chain sample-point gradients to the source vertices
        flat_idx = idx.reshape(-1)
        flat_g = grad_k.reshape(-1, 3)
        tri = mesh.faces[fids[flat_idx]]
        w = bary[flat_idx]
        for corner in range(3):
            np.add.at(grad, tri[:, corner],
                      lam2 * w[:, corner: corner + 1] * flat_g)
    loss = lam1 * parts["forward"] + lam2 * parts["reverse"]
    return loss, grad, parts


def chamfer_pull_loss(cloud, v, k=5):
    """Ablation replacement for the planar projection: pull each query
    toward the mean of its K nearest cloud points.
    """
    v = np.asarray(v, np.float64).reshape(-1, 3)
    _, idx = cloud.knn(v, k)
    target = cloud.points[idx].mean(axis=1)
    diff = v - target
    dist = np.linalg.norm(diff, axis=1)
    n_q = max(len(v), 1)
    safe = np.where(dist > 1e-12, dist, 1.0)
    grad = np.where((dist > 1e-12)[:, None], diff / safe[:, None], 0.0) / n_q
    return float(dist.sum() / n_q), grad


def chamfer_pull_to_neighbors(cloud_points, queries, k=1):
    """Reverse chamfer ablation: each query pulls its nearest sample points."""
    tree = cKDTree(cloud_points)
    queries = np.asarray(queries, np.float64).reshape(-1, 3)
    dist, idx = tree.query(queries, k=k)
    dist = dist.reshape(len(queries), k)
    idx = idx.reshape(len(queries), k)
    target = cloud_points[idx].mean(axis=1)
    diff = target - queries  # gradient w.r.t. the sample points
    d = np.linalg.norm(diff, axis=1)
    n_q = max(len(queries), 1)
    safe = np.where(d > 1e-12, d, 1.0)
    g = np.where((d > 1e-12)[:, None], diff / safe[:, None], 0.0) / (n_q * k)
    grad_k = np.repeat(g[:, None, :], k, axis=1)
    return float(d.sum() / n_q), idx, grad_k
