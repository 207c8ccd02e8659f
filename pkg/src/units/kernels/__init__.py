"""Hot numeric kernels: a numba @njit path and a pure-numpy path.

The dilated causal convolution dominates training time.  Both backends
share one contract (activations channels-last ``(batch, time, channels)``
float64, weights ``(kernel, in_channels, out_channels)``) and are selected
once at import via the UNITS_KERNELS env flag:

* ``UNITS_KERNELS=numba``  the JIT kernels (ImportError if numba missing)
* ``UNITS_KERNELS=numpy``  the BLAS-backed numpy path
* unset / ``auto``         numpy — ``benchmarks/kernel_bench.py`` shows the
  GEMM-shaped formulation beats the scalar JIT loops ~1.5x on the training
  shapes, since single-core BLAS already saturates the vector units
"""

import os

from . import numpy_impl

_requested = os.environ.get("UNITS_KERNELS", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"UNITS_KERNELS must be 'auto', 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numba":
    from . import numba_impl as _impl  # noqa: F401
else:
    _impl = numpy_impl

BACKEND = "numpy" if _impl is numpy_impl else "numba"

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
