"""Software rasterization of flat-shaded, back-face-culled normal images.

The image buffer is (H, W, 4) float: RGB encodes the face normal remapped
from [-1, 1] to [0, 1], alpha is hard coverage. Background is
(0.5, 0.5, 0.5, 0). Depth ties keep the lower face id, so coincident
duplicate faces render deterministically.
"""

import numpy as np

from . import _kernels
from .mesh import face_normals

BACKGROUND = np.array([0.5, 0.5, 0.5, 0.0])


class RasterOutput:
    """Rendered image plus the per-pixel geometry buffers."""

    def __init__(self, image, face_id, bary, depth, screen_xy, vert_depth, face_colors):
        self.image = image
        self.face_id = face_id
        self.bary = bary
        self.depth = depth
        self.screen_xy = screen_xy
        self.vert_depth = vert_depth
        self.face_colors = face_colors


def face_normal_colors(mesh, fnormals=None):
    if fnormals is None:
        fnormals, _ = face_normals(mesh)
    return 0.5 * (fnormals + 1.0)


def rasterize(mesh, cam, fnormals=None, backend=None):
    """Render one view; returns a RasterOutput.

    Faces are culled when their projected winding is not front-facing
    (screen-space signed-area test, which matches the outward-normal test
    for CCW faces under perspective).
    """
    res = cam.resolution
    px, py, depth, in_front = cam.project(mesh.positions)
    invw = np.where(in_front, 1.0 / np.where(in_front, depth, 1.0), 0.0)
    valid = in_front[mesh.faces].all(axis=1).astype(np.uint8)
    impl = _kernels.get_backend(backend)
    fid, bary, zbuf = impl.raster_forward(
        np.ascontiguousarray(px), np.ascontiguousarray(py),
        np.ascontiguousarray(invw),
        np.ascontiguousarray(mesh.faces, np.int32),
        np.ascontiguousarray(valid), res, res)

    colors = face_normal_colors(mesh, fnormals)
    image = np.empty((res, res, 4), np.float64)
    image[:] = BACKGROUND
    covered = fid >= 0
    image[covered, :3] = colors[fid[covered]]
    image[covered, 3] = 1.0
    return RasterOutput(image, fid, bary, zbuf,
                        np.stack([px, py], axis=1), depth, colors)


def render_views(mesh, cameras, backend=None):
    """Rasterize all views; returns list of RasterOutput."""
    fnormals, _ = face_normals(mesh)
    return [rasterize(mesh, cam, fnormals, backend) for cam in cameras]


def render_images(mesh, cameras, backend=None):
    return np.stack([r.image for r in render_views(mesh, cameras, backend)])


def save_png(image, path):
    """Dump an RGBA float image to PNG (debugging aid)."""
    from PIL import Image as PILImage

    arr = np.clip(image, 0.0, 1.0)
    PILImage.fromarray((arr * 255).astype(np.uint8), "RGBA").save(path)
