"""Build script for the optional compiled convolution kernels.

The package works without the extension (a vectorized NumPy fallback is
selected at import time); building it just makes the hot conv2d loops faster
on some shapes. Set GLPGE_SKIP_EXT=1 to force a pure-Python install.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("GLPGE_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "glpge.diffcore.kernels._convext",
                    ["src/glpge/diffcore/kernels/_convext.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3", "-fopenmp"],
                    extra_link_args=["-fopenmp"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level="3",
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
