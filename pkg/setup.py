import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "logitgmm._kernels._gausskern",
                ["src/logitgmm/_kernels/_gausskern.pyx"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )

# The compiled kernel is optional; the package falls back to the numpy
# backend when the extension is missing.
setup(ext_modules=ext_modules)
