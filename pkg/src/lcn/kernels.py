"""Convolution kernel backend selection.

The compiled Cython core (``lcn._convcore``) is preferred when it was built;
the pure-numpy implementation is the fallback.  Set ``LCN_KERNELS=python``
(or ``numpy``) to force the fallback, ``LCN_KERNELS=compiled`` to require the
extension.  ``benchmarks/bench_conv.py`` compares the two.
"""

import os

from . import _kernels_np

_FORCE = os.environ.get("LCN_KERNELS", "").strip().lower()

_impl = _kernels_np
_backend = "python"
if _FORCE in ("python", "numpy"):
    pass
else:
    try:
        from . import _convcore as _impl_compiled

        _impl = _impl_compiled
        _backend = "compiled"
    except ImportError:
        if _FORCE == "compiled":
            raise


def backend_name() -> str:
    return _backend


def conv2d_forward(x, k):
    return _impl.conv2d_forward(x, k)


def conv2d_grad_input(g, k):
    return _impl.conv2d_grad_input(g, k)


def conv2d_grad_kernel(x, g):
    return _impl.conv2d_grad_kernel(x, g)
