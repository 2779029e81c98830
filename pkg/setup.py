"""Build script for the optional compiled kernels.

The package works without them: ``cpcox._backend`` falls back to the
numpy implementation when ``cpcox._ckernels`` cannot be imported.
"""
import os

from setuptools import setup

try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    setup()
else:
    compiler_directives = {
        "language_level": 3,
        "boundscheck": False,
        "wraparound": False,
        "cdivision": True,
        "initializedcheck": False,
    }
    extensions = [
        Extension(
            "cpcox._ckernels",
            sources=[os.path.join("src", "cpcox", "_ckernels.pyx")],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    setup(ext_modules=cythonize(extensions, compiler_directives=compiler_directives))
