"""Builds the optional compiled scoring kernels.

The package works without them: convrag.retrieval.kernels falls back to a
numpy implementation when the extension is missing. Set CONVRAG_SKIP_EXT=1
to skip compilation entirely.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("CONVRAG_SKIP_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "convrag.retrieval._kernels",
                    ["src/convrag/retrieval/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
