"""Select the compiled kernels when available, else the NumPy fallback.

Set ``FORESTHASH_PURE_PYTHON=1`` to force the fallback.
"""

import os

from foresthash import _pykernels

if os.environ.get("FORESTHASH_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
    BACKEND = "python"
else:
    try:
        from foresthash import _ckernels as kernels
    except ImportError:
        kernels = _pykernels
        BACKEND = "python"
    else:
        BACKEND = "cython"

__all__ = ["BACKEND", "kernels"]
