"""Build script: compiles the optional Cython kernel module.

The package works without the extension (a numpy fallback is selected at
import time), so a failed native build only degrades performance. Set
MESHEVOLVE_DISABLE_NATIVE=1 to skip the extension build entirely.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible, otherwise continue without it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"meshevolve: native kernel build skipped ({exc})")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"meshevolve: building {ext.name} failed ({exc}); "
                  "falling back to pure python kernels")


def make_extensions():
    if os.environ.get("MESHEVOLVE_DISABLE_NATIVE"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "meshevolve._kernels._native",
        ["src/meshevolve/_kernels/_native.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # -ffp-contract=off keeps float results bit-identical to the
        # numpy fallback (no FMA contraction), which the kernel
        # equivalence tests rely on.
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    return cythonize([ext], language_level=3)


setup(
    cmdclass={"build_ext": OptionalBuildExt},
    ext_modules=make_extensions(),
)
