import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DOGMAP_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "dogmap._kernels._native",
                    ["src/dogmap/_kernels/_native.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        # No Cython available: install pure-Python only, kernels fall back at import.
        ext_modules = []

setup(ext_modules=ext_modules)
