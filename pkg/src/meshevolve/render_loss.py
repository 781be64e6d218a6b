"""Multi-view image loss and its gradients w.r.t. vertex positions.

Both images are Gaussian-blurred before the pixelwise difference, which
makes coverage changes differentiable. The gradient has two parts:

* an interior term: covered pixels depend on the face normal through the
  flat color, so the adjoint image is scattered per face and chained
  through the normalized-cross-product derivative;
* an edge term: visibility and crease discontinuities are integrated along
  the projected mesh edges; the local color jump is read from the rendered
  image itself, so occluded edge stretches contribute nothing.

The blur is self-adjoint (symmetric kernel, zero padding), so the adjoint
image is simply the blurred L1 sign map.
"""

import numpy as np
from scipy.ndimage import gaussian_filter

from .mesh import face_normals
from .raster import rasterize, BACKGROUND

# creases with color jumps below this contribute negligibly to the loss
_CREASE_TOL = 0.005
# offset (in pixels) of the two color probes across an edge
_PROBE_OFFSET = 1.0


def blur_images(image, sigma):
    if sigma <= 0:
        return image
    return gaussian_filter(image, sigma=(sigma, sigma, 0), mode="constant", cval=0.0)


def _bilinear(img, x, y):
    """Bilinear sample of an (H, W, C) image at pixel coordinates."""
    h, w = img.shape[:2]
    fx = np.clip(x - 0.5, 0.0, w - 1.0)
    fy = np.clip(y - 0.5, 0.0, h - 1.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (fx - x0)[:, None]
    ay = (fy - y0)[:, None]
    return ((1 - ay) * ((1 - ax) * img[y0, x0] + ax * img[y0, x1])
            + ay * ((1 - ax) * img[y1, x0] + ax * img[y1, x1]))


def _nearest(img, x, y, background):
    h, w = img.shape[:2]
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.empty((len(x), img.shape[2]))
    out[:] = background
    out[inside] = img[yi[inside], xi[inside]]
    return out


def _face_gradient_from_adjoint(mesh, fnormals, cross_norm, adjoint_rgb_per_face):
    """Chain d(color)/d(normal)/d(vertices) for the interior term.

    color = 0.5 (n + 1); dn = (I - n n^T)/|u| du; du = (v_{k+2} - v_{k+1}) x dv_k.
    """
    grad = np.zeros_like(mesh.positions)
    live = cross_norm > 1e-18
    if not live.any():
        return grad
    s = adjoint_rgb_per_face[live]
    n = fnormals[live]
    proj = s - n * np.einsum("ij,ij->i", s, n)[:, None]
    p = 0.5 * proj / cross_norm[live, None]
    tri = mesh.faces[live]
    pos = mesh.positions
    for k in range(3):
        w = pos[tri[:, (k + 2) % 3]] - pos[tri[:, (k + 1) % 3]]
        np.add.at(grad, tri[:, k], -np.cross(w, p))
    return grad


def _edge_candidates(mesh, front, colors):
    """Edges whose motion changes the image: silhouettes, boundaries, creases.

    Returns (a, b, owner_face, other_face) arrays; the owner is the front
    face the sweep orientation is referenced to, the other is the second
    front face for crease edges and -1 for silhouettes/boundaries (the far
    side is then read from the rendered image).
    """
    adj = mesh.adjacency
    edges = adj.edges
    f0 = np.full(len(edges), -1, np.int64)
    f1 = np.full(len(edges), -1, np.int64)
    for e, flist in enumerate(adj.edge_faces):
        if flist:
            f0[e] = flist[0]
        if len(flist) > 1:
            f1[e] = flist[1]
    front0 = (f0 >= 0) & front[np.maximum(f0, 0)]
    front1 = (f1 >= 0) & front[np.maximum(f1, 0)]

    boundary = (f1 < 0) & front0
    silhouette = (f0 >= 0) & (f1 >= 0) & (front0 != front1)
    both = (f0 >= 0) & (f1 >= 0) & front0 & front1
    cdiff = np.zeros(len(edges))
    if both.any():
        cdiff[both] = np.abs(colors[f0[both]] - colors[f1[both]]).max(axis=1)
    crease = both & (cdiff > _CREASE_TOL)

    keep = boundary | silhouette | crease
    owner = np.where(silhouette & ~front0, f1, f0)
    other = np.where(crease, f1, -1)
    return edges[keep, 0], edges[keep, 1], owner[keep], other[keep]


def _edge_gradient(mesh, cam, out, adjoint, positions_grad, aa=1):
    """Accumulate the sweep term along candidate edges for one view.

    ``out`` and ``cam`` may be at aa-times the adjoint's resolution; the
    adjoint is then sampled at coordinates/aa and scaled by 1/aa^2 (one
    high-res pixel carries that fraction of the base pixel's weight).
    """
    screen = out.screen_xy
    px = screen[:, 0]
    py = screen[:, 1]
    depth = out.vert_depth
    faces = mesh.faces
    x0 = px[faces[:, 0]]; y0 = py[faces[:, 0]]
    x1 = px[faces[:, 1]]; y1 = py[faces[:, 1]]
    x2 = px[faces[:, 2]]; y2 = py[faces[:, 2]]
    area2 = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    in_front = (depth > cam.near)[faces].all(axis=1)
    front = (area2 < 0.0) & in_front

    ea, eb, owner, other = _edge_candidates(mesh, front, out.face_colors)
    if not len(ea):
        return
    sa = screen[ea]
    sb = screen[eb]
    # the owner-face vertex that is neither ea nor eb fixes the inside side
    of = faces[owner]
    mask = (of != ea[:, None]) & (of != eb[:, None])
    third = of[np.arange(len(of)), np.argmax(mask, axis=1)]
    sc = screen[third]

    t = sb - sa
    seg_len = np.linalg.norm(t, axis=1)
    live = seg_len > 1e-9
    if not live.any():
        return
    ea, eb, owner, other, sa, sb, sc, t, seg_len = (
        arr[live] for arr in (ea, eb, owner, other, sa, sb, sc, t, seg_len))
    tn = t / seg_len[:, None]
    n_out = np.stack([-tn[:, 1], tn[:, 0]], axis=1)
    inward = np.einsum("ij,ij->i", n_out, sc - sa)
    n_out = np.where(inward[:, None] > 0, -n_out, n_out)

    m = np.maximum(2, np.ceil(seg_len).astype(np.int64))
    total = int(m.sum())
    eidx = np.repeat(np.arange(len(ea)), m)
    offs = np.arange(total) - np.repeat(np.cumsum(m) - m, m)
    tpar = (offs + 0.5) / m[eidx]
    xj = sa[eidx] + tpar[:, None] * (sb[eidx] - sa[eidx])
    dl = (seg_len / m)[eidx]

    img = out.image
    nvec = n_out[eidx]
    # inside color is the owner face's (exact); the far side is the other
    # crease face when known, otherwise probed from the rendered image
    colors4 = np.concatenate([out.face_colors,
                              np.ones((len(out.face_colors), 1))], axis=1)
    c_in = colors4[owner[eidx]]
    xout = xj[:, 0] + _PROBE_OFFSET * nvec[:, 0]
    yout = xj[:, 1] + _PROBE_OFFSET * nvec[:, 1]
    c_out = _nearest(img, xout, yout, BACKGROUND)
    known = other[eidx] >= 0
    c_out[known] = colors4[other[eidx][known]]
    # the adjoint of the box downsample is constant per base cell
    a = _nearest(adjoint, xj[:, 0] / aa, xj[:, 1] / aa,
                 np.zeros(adjoint.shape[2])) / (aa * aa)
    coef = np.einsum("ij,ij->i", a, c_in - c_out) * dl

    # occlusion: a sample contributes only where the edge is not buried
    # behind nearer geometry (z-buffer reads at the sample and outside it)
    wa_d = depth[ea][eidx]
    wb_d = depth[eb][eidx]
    d_edge = 1.0 / ((1.0 - tpar) / wa_d + tpar / wb_d)
    zmap = out.depth[:, :, None]
    z_at = _nearest(zmap, xj[:, 0], xj[:, 1], np.inf)[:, 0]
    z_out = _nearest(zmap, xout, yout, np.inf)[:, 0]
    tol = 0.05 * d_edge
    visible = (z_at >= d_edge - tol) | (z_out >= d_edge - tol)
    coef = np.where(visible, coef, 0.0)

    # perspective-correct 3D parameter for the screen parameter tpar, and the
    # projection Jacobian evaluated at the sample's 3D point (not endpoints)
    tau = tpar * wa_d / ((1.0 - tpar) * wb_d + tpar * wa_d)
    p3 = (1.0 - tau)[:, None] * mesh.positions[ea][eidx] \
        + tau[:, None] * mesh.positions[eb][eidx]
    dpx, dpy = cam.screen_jacobian(p3)
    jn = nvec[:, 0:1] * dpx + nvec[:, 1:2] * dpy
    np.add.at(positions_grad, ea[eidx], (coef * (1.0 - tau))[:, None] * jn)
    np.add.at(positions_grad, eb[eidx], (coef * tau)[:, None] * jn)


def downsample(image, aa):
    if aa == 1:
        return image
    h, w, c = image.shape
    return image.reshape(h // aa, aa, w // aa, aa, c).mean(axis=(1, 3))


def render_target_images(mesh, cameras, aa=2, color_mode="normal", backend=None):
    """Antialiased target images, one per camera (render once per run)."""
    from .camera import Camera

    images = []
    for cam in cameras:
        cam_hi = Camera(cam.position, cam.fov_deg, cam.resolution * aa,
                        target=cam.target, near=cam.near)
        out = rasterize(mesh, cam_hi, backend=backend)
        img = out.image
        if color_mode == "silhouette":
            covered = out.face_id >= 0
            img = np.empty_like(out.image)
            img[:] = BACKGROUND
            img[covered] = 1.0
        images.append(downsample(img, aa))
    return np.stack(images)


def image_loss(mesh, target_images, cameras, sigma_blur=1.0, metric="l1",
               color_mode="normal", aa=2, backend=None, return_renders=False):
    """Mean pixel loss over views vs pre-rendered targets, plus gradient.

    target_images is (n_views, H, W, 4) as produced by render_target_images
    on the preprocessed target. The source is rasterized at aa-times the
    loss resolution and box-downsampled, which makes coverage piecewise
    linear instead of a per-pixel staircase; the analytic silhouette
    gradients then agree with finite differences of this very loss. Raises
    on resolution mismatch.
    """
    from .camera import Camera

    target_images = np.asarray(target_images)
    if len(target_images) != len(cameras):
        raise ValueError("one target image per camera required")
    fnormals, cross_area, _ = face_normals(mesh, return_area=True)
    cross_norm = 2.0 * cross_area

    n_views = len(cameras)
    grad = np.zeros_like(mesh.positions)
    total = 0.0
    renders = []
    for view, cam in enumerate(cameras):
        cam_hi = cam if aa == 1 else Camera(cam.position, cam.fov_deg,
                                            cam.resolution * aa,
                                            target=cam.target, near=cam.near)
        out = rasterize(mesh, cam_hi, fnormals, backend=backend)
        if color_mode == "silhouette":
            covered = out.face_id >= 0
            img = np.empty_like(out.image)
            img[:] = BACKGROUND
            img[covered] = 1.0
            out.image = img
            out.face_colors = np.ones_like(out.face_colors)
        image = downsample(out.image, aa)
        if image.shape != target_images[view].shape:
            raise ValueError("render resolution does not match target image")
        if return_renders:
            renders.append(image)
        res = image.shape[0]
        norm = n_views * res * res * 4
        diff = blur_images(image, sigma_blur) - blur_images(target_images[view], sigma_blur)
        if metric == "l1":
            total += np.abs(diff).sum() / norm
            u = np.sign(diff) / norm
        elif metric == "l2":
            total += (diff * diff).sum() / norm
            u = 2.0 * diff / norm
        else:
            raise ValueError(f"unknown metric {metric!r}")
        adjoint = blur_images(u, sigma_blur)

        if color_mode != "silhouette":
            covered = out.face_id >= 0
            adj_up = np.repeat(np.repeat(adjoint, aa, axis=0), aa, axis=1) / (aa * aa)
            per_face = np.zeros((mesh.n_faces, 3))
            np.add.at(per_face, out.face_id[covered], adj_up[covered][:, :3])
            grad += _face_gradient_from_adjoint(mesh, fnormals, cross_norm, per_face)
        _edge_gradient(mesh, cam_hi, out, adjoint, grad, aa=aa)

    if not np.isfinite(grad).all():
        raise FloatingPointError("image loss produced a non-finite gradient")
    if return_renders:
        return total, grad, renders
    return total, grad
