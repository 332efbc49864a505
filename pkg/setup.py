"""Build script: compiles the optional Cython kernel core.

The extension is a pure speedup; if Cython or a C compiler is missing the
package installs without it and falls back to the numpy kernels at import
time (see accentdet.kernels).
"""

import os

from setuptools import setup

PYX = "src/accentdet/kernels/_fastops.pyx"

ext_modules = []
if os.path.exists(PYX):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "accentdet.kernels._fastops",
                    [PYX],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
