from setuptools import setup, Extension

# The compiled kernels are optional: without Cython (or on build failure) the
# package falls back to the numpy implementations in flaegis._kernels_py.
try:
    from Cython.Build import cythonize
    import numpy as np

    ext_modules = cythonize(
        [
            Extension(
                "flaegis._kernels",
                ["src/flaegis/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
