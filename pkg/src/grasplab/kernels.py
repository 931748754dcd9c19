"""Kernel backend selection.

The compiled Cython module is preferred. Set ``GRASPLAB_KERNELS=python``
to force the NumPy fallback (useful for benchmarking and debugging).
"""

import os

from grasplab import _pykernels

_requested = os.environ.get("GRASPLAB_KERNELS", "auto").lower()

if _requested == "python":
    _impl = _pykernels
else:
    try:
        from grasplab import _ckernels as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

im2col = _impl.im2col
col2im = _impl.col2im
auc_pair_counts = _impl.auc_pair_counts
pwl_descent = _impl.pwl_descent


def get_backend(name):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from grasplab import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
