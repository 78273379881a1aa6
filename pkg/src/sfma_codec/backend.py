"""Backend selection for the hot convolution kernels.

SFMA_CODEC_BACKEND=numba|numpy|auto picks the implementation at import
time; "auto" (default) prefers numba when it imports cleanly.  Both
backends expose the same functions on the same layouts.  Convolution
results agree to a few ulps (the summation orders differ); the range
coder is bit-identical across backends because its tables are built
with a fixed operation order.  benchmarks/bench_backends.py times both
and checks agreement.
"""

import os

from . import _kernels_numpy

_requested = os.environ.get("SFMA_CODEC_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"SFMA_CODEC_BACKEND must be 'auto', 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    BACKEND = "numpy"
    _k = _kernels_numpy
else:
    try:
        from . import _kernels_numba as _k
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        BACKEND = "numpy"
        _k = _kernels_numpy

conv2d_fwd = _k.conv2d_fwd
conv2d_bwd_x = _k.conv2d_bwd_x
conv2d_bwd_w = _k.conv2d_bwd_w
dwconv2d_fwd = _k.dwconv2d_fwd
dwconv2d_bwd_x = _k.dwconv2d_bwd_x
dwconv2d_bwd_w = _k.dwconv2d_bwd_w
