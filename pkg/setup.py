"""Build script: compiles the training kernel extension when a toolchain is
available, otherwise installs the pure-Python package (the numpy kernel is
selected at import time as a fallback)."""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "mcse._kernel_cy",
                ["src/mcse/_kernel_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - toolchain-dependent
    sys.stderr.write(f"warning: compiled kernel skipped ({exc}); "
                     "using the pure-Python kernel\n")

setup(ext_modules=ext_modules)
