from setuptools import setup, Extension

import numpy as np
from Cython.Build import cythonize

ext = Extension(
    "pooldesign._kernels._core",
    ["src/pooldesign/_kernels/_core.pyx"],
    include_dirs=[np.get_include()],
    extra_compile_args=["-O3"],
)

setup(ext_modules=cythonize(ext, language_level=3))
