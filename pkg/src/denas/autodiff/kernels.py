"""Backend selection for the convolution hot loops.

The compiled extension is used when it was built and ``DENAS_PURE_PYTHON`` is
unset; otherwise the numpy implementation is used.  Both expose ``im2col`` and
``col2im`` with identical signatures and results.
"""

import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("DENAS_PURE_PYTHON"):
        raise ImportError("pure python requested")
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def im2col(x, k, stride, dilation, padding, out_h, out_w, backend=None):
    mod = _pick(backend)
    return mod.im2col(np.ascontiguousarray(x), k, stride, dilation, padding, out_h, out_w)


def col2im(cols, chans, h, w, k, stride, dilation, padding, out_h, out_w, backend=None):
    mod = _pick(backend)
    return mod.col2im(
        np.ascontiguousarray(cols), chans, h, w, k, stride, dilation, padding, out_h, out_w
    )


def _pick(backend):
    if backend is None:
        backend = BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return _compiled
    if backend == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {backend!r}")
