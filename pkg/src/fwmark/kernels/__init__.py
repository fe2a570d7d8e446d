"""Convolution kernel backend selection.

The compiled extension (``fwmark._ckernels``) is preferred when it built;
otherwise the pure-NumPy reference backend is used.  ``FWMARK_KERNELS=py``
forces the fallback, ``FWMARK_KERNELS=ext`` makes a missing extension an
error instead of a silent downgrade.
"""

import os

from . import numpy_ref

_choice = os.environ.get("FWMARK_KERNELS", "").strip().lower()

if _choice in ("py", "numpy", "python"):
    _impl = numpy_ref
    BACKEND = "numpy"
elif _choice in ("ext", "c", "cython"):
    from fwmark import _ckernels as _impl  # noqa: F401

    BACKEND = "ext"
else:
    try:
        from fwmark import _ckernels as _impl

        BACKEND = "ext"
    except ImportError:
        _impl = numpy_ref
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward_input = _impl.conv2d_backward_input
conv2d_backward_weight = _impl.conv2d_backward_weight


def get_backend():
    return BACKEND
