"""Backend selection for the convolution inner loops.

The compiled extension is preferred; set ``GHOSTCONV_PURE_PYTHON=1`` to force
the numpy fallback. ``BACKEND`` names whichever was picked at import.
"""
import os

from . import _pykernels

try:
    if os.environ.get("GHOSTCONV_PURE_PYTHON"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
depthwise_forward = _impl.depthwise_forward
depthwise_backward = _impl.depthwise_backward


def available_backends():
    """Map backend name to kernel module for every backend importable here."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
