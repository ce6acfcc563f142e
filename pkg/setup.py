"""Build the optional Cython kernels.

The package works without them: ``steeraudit.kernels`` falls back to the
NumPy/pure-Python implementations when the extension is missing.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("STEERAUDIT_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "steeraudit._kernels",
                    ["src/steeraudit/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
