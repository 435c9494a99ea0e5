import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

_flags = ["-O3"]
if os.environ.get("PHASELESS_NO_NATIVE", "") == "":
    _flags.append("-march=native")

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "phaseless._ndft_core",
                ["src/phaseless/_ndft_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=_flags,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
