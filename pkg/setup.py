"""Build hook for the optional compiled kernels.

The extension is marked optional: if compilation fails the package still
installs and ``drp.kernels`` falls back to the numpy implementation.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "drp._kernels",
        ["src/drp/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
