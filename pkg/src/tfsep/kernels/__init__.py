"""Hot-loop convolution kernels with a numba fast path and a numpy fallback.

The active backend is picked once at import time:

  * TFSEP_BACKEND=numpy  forces the pure-numpy reference kernels
  * TFSEP_BACKEND=numba  forces the jit kernels (ImportError if numba is missing)
  * unset               numba when importable, numpy otherwise

Both backends implement the same three functions; see numpy_ref for the
exact contract.
"""

import os

from . import numpy_ref

_requested = os.environ.get("TFSEP_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise ValueError(f"TFSEP_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    _impl = numpy_ref
    BACKEND = "numpy"
else:
    try:
        from . import numba_jit as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_ref
        BACKEND = "numpy"

conv1d_fwd = _impl.conv1d_fwd
conv1d_gx = _impl.conv1d_gx
conv1d_gw = _impl.conv1d_gw

__all__ = ["conv1d_fwd", "conv1d_gx", "conv1d_gw", "BACKEND"]
