"""Build the optional compiled kernels.

Set ``FLOATARM_NO_EXT=1`` to install without the extension; the package then
falls back to its numpy kernels.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FLOATARM_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("floatarm._kernels", ["src/floatarm/_kernels.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3"],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
