"""Target preparation: normalization, orientation doubling, voxel-based
initial mesh, visibility filtering, and oriented point cloud extraction.

The initial mesh is built in-process: conservative voxelization, exterior
flood fill (closing internal cavities), a morphological close, and a
well-composing repair pass that removes edge- and corner-touching voxel
configurations, so the extracted boundary surface is 2-manifold by
construction.
"""

import numpy as np
from scipy import ndimage

from .camera import fibonacci_sphere_cameras
from .cloud import OrientedPointCloud, sample_surface
from .geometry import TriangleBvh
from .mesh import (IndexedMesh, face_normals, split_nonmanifold_vertices,
                   drop_unreferenced_vertices)
from .raster import rasterize


class NormalizationTransform:
    """Translate the vertex centroid to the origin, scale max radius to 1."""

    def __init__(self, translation, scale):
        self.translation = np.asarray(translation, np.float64)
        self.scale = float(scale)

    def apply(self, points):
        return (np.asarray(points, np.float64) + self.translation) * self.scale

    def invert(self, points):
        return np.asarray(points, np.float64) / self.scale - self.translation

    def to_dict(self):
        return {"translation": self.translation.tolist(), "scale": self.scale}


def normalize(mesh):
    """Center the vertex centroid and scale the farthest vertex to radius 1."""
    if mesh.n_vertices == 0:
        raise ValueError("mesh has no vertices")
    centroid = mesh.positions.mean(axis=0)
    radius = np.linalg.norm(mesh.positions - centroid, axis=1).max()
    if radius <= 0:
        raise ValueError("all vertices coincide; cannot normalize")
    t = NormalizationTransform(-centroid, 1.0 / radius)
    return IndexedMesh(t.apply(mesh.positions), mesh.faces), t


def dedupe_faces(faces):
    """Drop degenerate faces and all permutation-duplicates (keep first)."""
    faces = np.asarray(faces, np.int32).reshape(-1, 3)
    distinct = ((faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
                & (faces[:, 0] != faces[:, 2]))
    faces = faces[distinct]
    key = np.sort(faces, axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    return faces[np.sort(first)]


def orientation_double(mesh):
    """Deduplicate faces, then add a winding-flipped twin for every face.

    Whatever the input orientation, each surface patch then has exactly one
    renderable side, so back-face culling cannot create holes.
    """
    faces = dedupe_faces(mesh.faces)
    doubled = np.concatenate([faces, faces[:, ::-1]])
    return IndexedMesh(mesh.positions.copy(), doubled)


# ---------------------------------------------------------------------------
# voxel initial mesh


def _voxelize_conservative(mesh, resolution, origin, spacing):
    """Mark every voxel whose box intersects any input triangle (SAT test)."""
    solid = np.zeros((resolution,) * 3, bool)
    tris = mesh.positions[mesh.faces]
    half = spacing / 2.0

    for tri in tris:
        lo = np.floor((tri.min(axis=0) - origin) / spacing).astype(int)
        hi = np.floor((tri.max(axis=0) - origin) / spacing).astype(int)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, resolution - 1)
        if (hi < lo).any():
            continue
        ii, jj, kk = np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)),
                                 indexing="ij")
        cells = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
        centers = origin + (cells + 0.5) * spacing
        hit = _tri_box_overlap(tri, centers, half)
        sel = cells[hit]
        solid[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    return solid


def _tri_box_overlap(tri, centers, half):
    """Akenine-Moller triangle/AABB separating-axis test, one triangle vs
    many congruent boxes."""
    v = tri[None, :, :] - centers[:, None, :]     # (N, 3, 3)
    e = np.array([tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]])

    ok = np.ones(len(centers), bool)
    # box face axes
    for ax in range(3):
        lo = v[:, :, ax].min(axis=1)
        hi = v[:, :, ax].max(axis=1)
        ok &= (lo <= half) & (hi >= -half)
    # triangle plane
    n = np.cross(e[0], e[1])
    d = np.einsum("j,nj->n", n, v[:, 0, :])
    r = half * np.abs(n).sum()
    ok &= np.abs(d) <= r
    # 9 cross-product axes
    for i in range(3):
        for ax in range(3):
            axis = np.zeros(3)
            axis[ax] = 1.0
            a = np.cross(axis, e[i])
            if np.abs(a).sum() < 1e-16:
                continue
            p = np.einsum("j,nkj->nk", a, v)
            r = half * np.abs(a).sum()
            ok &= (p.min(axis=1) <= r) & (p.max(axis=1) >= -r)
    return ok


_FACE_NEIGHBORS = np.array([
    [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])


def _fill_exterior(solid):
    """Solid = everything not 6-connected to the grid boundary (closes cavities)."""
    free = ~solid
    structure = ndimage.generate_binary_structure(3, 1)
    labels, n = ndimage.label(free, structure=structure)
    if n == 0:
        return solid
    border = np.zeros_like(solid)
    border[0, :, :] = border[-1, :, :] = True
    border[:, 0, :] = border[:, -1, :] = True
    border[:, :, 0] = border[:, :, -1] = True
    outside_labels = np.unique(labels[border & free])
    outside_labels = outside_labels[outside_labels > 0]
    exterior = np.isin(labels, outside_labels)
    return ~exterior


def _well_compose(solid):
    """Fill voxels until no 2D checkerboard or 3D antipodal-pair pattern
    remains; the boundary of a well-composed set is a 2-manifold surface.

    Filling only adds material, so conservative containment is preserved.
    """
    solid = solid.copy()
    for _ in range(256):
        changed = False
        # 2x2 checkerboards in the three axis-aligned plane orientations:
        # fill one of the two empty corners (deterministic choice)
        for axis in range(3):
            a = solid
            u, w = [x for x in range(3) if x != axis]

            def quad(du, dw):
                s = [slice(None)] * 3
                s[u] = slice(du, a.shape[u] - 1 + du)
                s[w] = slice(dw, a.shape[w] - 1 + dw)
                return a[tuple(s)]

            q00 = quad(0, 0)
            q01 = quad(0, 1)
            q10 = quad(1, 0)
            q11 = quad(1, 1)
            bad_main = q00 & q11 & ~q01 & ~q10      # fill the (0, 1) corner
            bad_anti = ~q00 & ~q11 & q01 & q10      # fill the (0, 0) corner
            for bad, dw in ((bad_main, 1), (bad_anti, 0)):
                if not bad.any():
                    continue
                changed = True
                idx = np.argwhere(bad)
                corner = idx.copy()
                corner[:, w] += dw
                solid[corner[:, 0], corner[:, 1], corner[:, 2]] = True
        # 2x2x2 blocks whose only solid voxels are an antipodal corner pair:
        # fill an empty corner (block origin, or (0,0,1) when the origin is
        # part of the pair)
        a = solid
        blocks = np.zeros(tuple(np.array(a.shape) - 1) + (2, 2, 2), bool)
        for dx in range(2):
            for dy in range(2):
                for dz in range(2):
                    blocks[..., dx, dy, dz] = a[dx:a.shape[0] - 1 + dx,
                                                dy:a.shape[1] - 1 + dy,
                                                dz:a.shape[2] - 1 + dz]
        flat = blocks.reshape(-1, 8)
        count = flat.sum(axis=1)
        pair_origin = flat[:, 0] & flat[:, 7]
        pair_other = ((flat[:, 1] & flat[:, 6]) | (flat[:, 2] & flat[:, 5])
                      | (flat[:, 3] & flat[:, 4]))
        shape3 = blocks.shape[:3]
        anti_origin = ((count == 2) & pair_origin).reshape(shape3)
        anti_other = ((count == 2) & ~pair_origin & pair_other).reshape(shape3)
        if anti_origin.any():
            changed = True
            idx = np.argwhere(anti_origin)
            solid[idx[:, 0], idx[:, 1], idx[:, 2] + 1] = True
        if anti_other.any():
            changed = True
            idx = np.argwhere(anti_other)
            solid[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        if not changed:
            return solid
    raise RuntimeError("well-composing repair did not converge")


_QUAD_TABLE = {
    # direction -> corner offsets (CCW seen from outside)
    (1, 0, 0): [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
    (-1, 0, 0): [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
    (0, 1, 0): [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
    (0, -1, 0): [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
    (0, 0, 1): [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    (0, 0, -1): [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
}


def _extract_boundary(solid, origin, spacing):
    """Boundary quads between solid and empty voxels, triangulated CCW-out."""
    corners = {}
    positions = []

    def corner_id(ix, iy, iz):
        key = (ix, iy, iz)
        if key not in corners:
            corners[key] = len(positions)
            positions.append(origin + np.array([ix, iy, iz]) * spacing)
        return corners[key]

    faces = []
    padded = np.pad(solid, 1)
    for direction, offs in _QUAD_TABLE.items():
        d = np.array(direction)
        neighbor = np.roll(padded, -d, axis=(0, 1, 2))
        exposed = padded & ~neighbor
        cells = np.argwhere(exposed) - 1
        for c in cells:
            ids = [corner_id(*(c + o)) for o in offs]
            faces.append([ids[0], ids[1], ids[2]])
            faces.append([ids[0], ids[2], ids[3]])
    return IndexedMesh(np.asarray(positions), np.asarray(faces, np.int32))


def voxel_initial_mesh(mesh, resolution=64):
    """Closed 2-manifold shell enclosing the input surface.

    Conservative voxelization (any triangle contact makes a voxel solid),
    exterior flood fill, morphological close, well-composing repair, then
    boundary extraction and non-manifold-vertex splitting.
    """
    if resolution < 8:
        raise ValueError("voxel resolution must be at least 8")
    lo, hi = mesh.bounding_box()
    span = float((hi - lo).max())
    if span <= 0:
        raise ValueError("degenerate bounding box")
    spacing = span / (resolution - 6)  # leave a margin of empty cells
    origin = (lo + hi) / 2.0 - spacing * resolution / 2.0

    solid = _voxelize_conservative(mesh, resolution, origin, spacing)
    if not solid.any():
        raise ValueError("voxelization produced no solid cells")
    solid = _fill_exterior(solid)
    structure = ndimage.generate_binary_structure(3, 1)
    solid = ndimage.binary_erosion(
        ndimage.binary_dilation(solid, structure), structure)
    solid = _fill_exterior(solid)
    solid = _well_compose(solid)

    shell = _extract_boundary(solid, origin, spacing)
    shell = split_nonmanifold_vertices(shell)
    shell, _ = drop_unreferenced_vertices(shell)
    return shell


# ---------------------------------------------------------------------------
# visibility filtering and sampling


def visibility_filter(mesh, n_views=36, pixel_threshold=4, resolution=512,
                      camera_radius=2.5, fov_deg=60.0):
    """Drop faces visible in too few pixels, but keep fully hidden ones.

    Faces with zero visible pixels are interior structure and stay; faces
    with a positive count below the threshold are slivers or spurious
    geometry that would corrupt sampling.
    """
    cams = fibonacci_sphere_cameras(n_views, radius=camera_radius,
                                    fov_deg=fov_deg, resolution=resolution)
    counts = np.zeros(mesh.n_faces, np.int64)
    fnormals, _ = face_normals(mesh)
    for cam in cams:
        out = rasterize(mesh, cam, fnormals)
        covered = out.face_id[out.face_id >= 0]
        counts += np.bincount(covered, minlength=mesh.n_faces)
    keep = (counts == 0) | (counts >= pixel_threshold)
    filtered = IndexedMesh(mesh.positions.copy(), mesh.faces[keep])
    return filtered, counts


def sample_target(mesh, n_points, seed=0):
    """Area-uniform oriented samples; per-point normal is the face normal."""
    rng = np.random.default_rng(seed)
    pts, nrm, fids, bary = sample_surface(mesh, n_points, rng)
    return pts, nrm, fids


def _cone_directions(axis, count, half_angle_rad, rng):
    """Deterministic random directions within a cone around each axis row."""
    axis = axis / np.linalg.norm(axis, axis=1)[:, None]
    n = len(axis)
    u = rng.random((n, count))
    phi = rng.random((n, count)) * 2 * np.pi
    cos_t = 1.0 - u * (1.0 - np.cos(half_angle_rad))
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t ** 2))
    # orthonormal frame per axis
    helper = np.where(np.abs(axis[:, 2:3]) < 0.9,
                      np.tile([0.0, 0.0, 1.0], (n, 1)),
                      np.tile([1.0, 0.0, 0.0], (n, 1)))
    t1 = np.cross(axis, helper)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(axis, t1)
    dirs = (axis[:, None, :] * cos_t[:, :, None]
            + t1[:, None, :] * (sin_t * np.cos(phi))[:, :, None]
            + t2[:, None, :] * (sin_t * np.sin(phi))[:, :, None])
    return dirs


def prune_samples(points, normals, target_mesh, initial_mesh, n_rays=16,
                  cone_deg=30.0, seed=0):
    """Reject samples on interior structure facing away from the outside.

    Each sample is projected to the initial (inflated) shell; a beam of rays
    toward the projection direction is cast against the target. The sample
    survives when more than half the rays travel farther than the projection
    distance before hitting the target again.
    """
    init_bvh = TriangleBvh(initial_mesh.positions[initial_mesh.faces])
    target_bvh = TriangleBvh(target_mesh.positions[target_mesh.faces])
    dist, proj_fid, proj_pt = init_bvh.closest_points(points)

    d = proj_pt - points
    li = np.linalg.norm(d, axis=1)
    degenerate = li < 1e-12
    safe_dir = np.where(degenerate[:, None], normals, d)
    safe_dir = safe_dir / np.linalg.norm(safe_dir, axis=1)[:, None]

    rng = np.random.default_rng(seed)
    dirs = _cone_directions(safe_dir, n_rays, np.radians(cone_deg) / 2.0, rng)
    eps = 1e-5 * max(1.0, float(li.max()))
    origins = np.repeat(points, n_rays, axis=0)
    flat_dirs = dirs.reshape(-1, 3)
    t, fid = target_bvh.ray_first_hit(origins + eps * flat_dirs, flat_dirs,
                                      tmin=0.0, tmax=np.inf)
    ray_len = np.where(fid >= 0, t + eps, np.inf).reshape(-1, n_rays)
    votes = (ray_len > li[:, None]).sum(axis=1)
    keep = degenerate | (votes * 2 > n_rays)

    init_normals, _ = face_normals(initial_mesh)
    proj_normal = init_normals[np.maximum(proj_fid, 0)]
    return keep, proj_normal


def orient_samples(normals, proj_normals, threshold=0.1):
    """Flip sample normals disagreeing with the initial-shell normal.

    Flips whenever n_i . n_proj < threshold (0.1 per the orientation rule:
    nearly-orthogonal normals flip too).
    """
    dots = np.einsum("ij,ij->i", normals, proj_normals)
    flip = dots < threshold
    out = normals.copy()
    out[flip] = -out[flip]
    return out, flip


def prepare_target_cloud(render_mesh, initial_mesh, n_points=100000, seed=0,
                         n_rays=16, cone_deg=30.0):
    """sample -> prune -> orient; returns the cleaned OrientedPointCloud."""
    pts, nrm, _ = sample_target(render_mesh, n_points, seed)
    keep, proj_normal = prune_samples(pts, nrm, render_mesh, initial_mesh,
                                      n_rays=n_rays, cone_deg=cone_deg,
                                      seed=seed + 1)
    pts = pts[keep]
    nrm, _ = orient_samples(nrm[keep], proj_normal[keep])
    return OrientedPointCloud(pts, nrm)
