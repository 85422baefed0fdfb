"""Hot-loop kernels, compiled when available.

The Cython extension ``voladv._kernels`` is used when it was built at install
time; otherwise the numpy implementation in ``voladv._kernels_py`` is used.
Set ``VOLADV_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

if os.environ.get("VOLADV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
        BACKEND = "python"

gated_scan = _impl.gated_scan
gated_scan_backward = _impl.gated_scan_backward

__all__ = ["BACKEND", "gated_scan", "gated_scan_backward"]
