"""Hot kernels, compiled when available.

The Cython extension ``_ckernels`` is used if it imports; otherwise the numpy
twins in ``_pykernels`` take over. Setting ``HAZEFORGE_PURE_PYTHON=1`` forces
the fallback. Both backends return bitwise-identical arrays.
"""
import os

from . import _pykernels

try:
    if os.environ.get("HAZEFORGE_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl
except ImportError:
    _impl = _pykernels

BACKEND = _impl.BACKEND

im2col = _impl.im2col
col2im = _impl.col2im
sep_filter_valid = _impl.sep_filter_valid
sep_filter_valid_T = _impl.sep_filter_valid_T
min_filter = _impl.min_filter

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "sep_filter_valid",
    "sep_filter_valid_T",
    "min_filter",
]
