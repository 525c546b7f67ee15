import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # No Cython: install pure-Python only; deploywatch.kernels falls back at import.
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "deploywatch.kernels._native",
                ["src/deploywatch/kernels/_native.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
