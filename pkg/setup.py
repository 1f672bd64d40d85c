"""Build script: compiles the optional Cython voxel kernel.

The extension is marked optional so the package still installs (with the
pure numpy fallback) on machines without a C compiler.
"""
import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

ext_modules = [
    Extension(
        "shaperank._kernels._voxelcy",
        sources=["src/shaperank/_kernels/_voxelcy.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
