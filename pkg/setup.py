import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("CAUSALOT_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # pure-Python install; kernels fall back at import
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "causalot._kernels",
                    ["src/causalot/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
