"""Build script: compiles the optional Cython propagation kernel.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so a failed compile only disables the fast path.
"""
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
                "bragg_forge._kernels._cy_core",
                sources=["src/bragg_forge/_kernels/_cy_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"bragg-forge: skipping Cython extension build ({exc})\n")

setup(ext_modules=ext_modules)
