"""Build script: compiles the optional feature-kernel extension.

The package works without the extension (a pure numpy fallback is selected at
import time), so a failed compile is not fatal.  Set ICP_SKIP_EXT=1 to skip
the build entirely.
"""

import os

from setuptools import Extension, setup

PYX = os.path.join(os.path.dirname(os.path.abspath(__file__)), "src", "icp", "features", "_kernels.pyx")

ext_modules = []
if os.environ.get("ICP_SKIP_EXT") != "1" and os.path.exists(PYX):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "icp.features._kernels",
                    ["src/icp/features/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
