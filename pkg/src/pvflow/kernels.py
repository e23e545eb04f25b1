"""Kernel dispatch: compiled extension when available, numpy fallback otherwise.

Set the environment variable ``PVFLOW_PURE=1`` before import to force the
fallback (used by the parity tests and the benchmark).  Both backends produce
identical results; the extension only changes speed.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("PVFLOW_PURE"):
    _impl = _kernels_py
    HAVE_EXT = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        HAVE_EXT = True
    except ImportError:
        _impl = _kernels_py
        HAVE_EXT = False


def _c(a, dtype=None):
    return np.ascontiguousarray(a, dtype=dtype)


def knn_brute(positions, k):
    return _impl.knn_brute(_c(positions), int(k))


def segment_sum(x, seg, n_seg):
    return _impl.segment_sum(_c(x), _c(seg, np.int64), int(n_seg))


def weighted_gather(x, idx, w):
    x = _c(x)
    return _impl.weighted_gather(x, _c(idx, np.int64), _c(w, x.dtype))


def weighted_gather_backward(idx, w, grad, n_rows):
    grad = _c(grad)
    return _impl.weighted_gather_backward(
        _c(idx, np.int64), _c(w, grad.dtype), grad, int(n_rows)
    )


def group_max(x, gsize):
    return _impl.group_max(_c(x), int(gsize))


def group_max_backward(arg, grad, m):
    return _impl.group_max_backward(_c(arg, np.int64), _c(grad), int(m))
