"""Perspective cameras on a view sphere.

Cameras look at the origin from a Fibonacci lattice on the sphere; the same
placement serves the preprocessing renders and the loss views.
"""

import math

import numpy as np

_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class Camera:
    """Look-at perspective camera with square viewport.

    Screen convention: pixel (0, 0) is top-left, pixel centers at +0.5;
    view depth is the distance along the viewing direction.
    """

    def __init__(self, position, fov_deg=60.0, resolution=512, up=None,
                 target=(0.0, 0.0, 0.0), near=0.05):
        self.position = np.asarray(position, np.float64)
        self.target = np.asarray(target, np.float64)
        self.fov_deg = float(fov_deg)
        self.resolution = int(resolution)
        self.near = float(near)
        if up is None:
            view = self.target - self.position
            view = view / np.linalg.norm(view)
            up = (0.0, 1.0, 0.0)
            if abs(view @ np.asarray(up)) > 0.999:
                up = (1.0, 0.0, 0.0)
        self.up = np.asarray(up, np.float64)

        z = self.position - self.target
        z = z / np.linalg.norm(z)
        x = np.cross(self.up, z)
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        self.rot = np.stack([x, y, z])  # world -> camera rows
        self.cot_half_fov = 1.0 / math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def view_dir(self):
        return -self.rot[2]

    def project(self, points):
        """Project world points to pixel coordinates.

        Returns (px, py, depth, in_front) where depth is view-space depth
        and in_front marks points beyond the near plane.
        """
        p = (np.asarray(points, np.float64) - self.position) @ self.rot.T
        depth = -p[:, 2]
        in_front = depth > self.near
        safe = np.where(in_front, depth, 1.0)
        a = self.cot_half_fov
        res = self.resolution
        px = 0.5 * res * (1.0 + a * p[:, 0] / safe)
        py = 0.5 * res * (1.0 - a * p[:, 1] / safe)
        return px, py, depth, in_front

    def screen_jacobian(self, points):
        """d(px)/dv and d(py)/dv for world points (each (N, 3))."""
        p = (np.asarray(points, np.float64) - self.position) @ self.rot.T
        depth = -p[:, 2]
        a = self.cot_half_fov
        res = self.resolution
        rx, ry, rz = self.rot
        # d(depth)/dv = -rz ; px = res/2 (1 + a x/depth)
        inv = 1.0 / depth
        dpx = 0.5 * res * a * (rx[None, :] * inv[:, None]
                               + p[:, 0:1] * (inv ** 2)[:, None] * rz[None, :])
        dpy = -0.5 * res * a * (ry[None, :] * inv[:, None]
                                + p[:, 1:2] * (inv ** 2)[:, None] * rz[None, :])
        return dpx, dpy

    def config(self):
        return {"position": self.position.tolist(), "fov_deg": self.fov_deg,
                "resolution": self.resolution, "near": self.near}


def fibonacci_sphere_directions(n):
    """Unit directions from the Fibonacci lattice; n=1 is +z by convention."""
    if n < 1:
        raise ValueError("need at least one direction")
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * _GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def fibonacci_sphere_cameras(n, radius=2.5, fov_deg=60.0, resolution=512, near=0.05):
    """n cameras evenly spread on a sphere of given radius, looking at origin."""
    dirs = fibonacci_sphere_directions(n)
    return [Camera(d * radius, fov_deg=fov_deg, resolution=resolution, near=near)
            for d in dirs]
