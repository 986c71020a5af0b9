"""Build script.

The compiled projection kernel is optional: if Cython or a C compiler is
unavailable the package installs without it and falls back to the NumPy
implementation at import time.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "surfot._projection",
                sources=["src/surfot/_projection.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    sys.stderr.write(f"surfot: building without compiled kernel ({exc})\n")

setup(ext_modules=ext_modules)
