"""Kernel backend selection.

The compiled extension is used when importable; otherwise the numpy
fallback takes over. MESHEVOLVE_FORCE_PY=1 forces the fallback (used by the
benchmark and the backend-equivalence tests).
"""

import os

from . import py_backend

if os.environ.get("MESHEVOLVE_FORCE_PY"):
    _impl = py_backend
else:
    try:
        from . import _native as _impl
    except ImportError:
        _impl = py_backend

BACKEND = _impl.BACKEND
raster_forward = _impl.raster_forward
bvh_ray_first_hit = _impl.bvh_ray_first_hit
bvh_closest_point = _impl.bvh_closest_point


def get_backend(name=None):
    """Return the kernel module for an explicit backend name (or the active one)."""
    if name in (None, BACKEND):
        return _impl
    if name == "python":
        return py_backend
    if name == "native":
        from . import _native
        return _native
    raise ValueError(f"unknown backend {name!r}")
