"""Pick the compiled kernels when available, the numpy ones otherwise.

Set ``CPCOX_PURE_PYTHON=1`` to force the numpy implementation.
"""
import os

from . import _pykernels

if os.environ.get("CPCOX_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as kernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        kernels = _pykernels
        BACKEND = "python"

OK, MAX_ITER, DIVERGED, NO_ASCENT = 0, 1, 2, 3
