"""Pure-numpy kernels, the fallback used when the compiled extension is absent.

Every function here has a compiled twin in ``_kernels.pyx``.  The two must
agree bit-for-bit (up to the sign of zero), so accumulation orders below are
chosen deliberately and must not be "optimized" without touching both sides:

- segment/scatter sums accumulate in ascending element order,
- weighted gathers accumulate corners in ascending corner order,
- argmax scans keep the first (lowest-index) maximum.
"""

import numpy as np

_KNN_CHUNK = 256


def knn_brute(positions, k):
    """Exact k-nearest-neighbor indices, self excluded, ties by lower index.

    positions: (N, 3) float32/float64, k: int with 1 <= k <= N-1.
    Returns (N, k) int64, each row sorted by (distance, index) ascending.
    """
    n = positions.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, _KNN_CHUNK):
        stop = min(start + _KNN_CHUNK, n)
        diff = positions[start:stop, None, :] - positions[None, :, :]
        d2 = (diff * diff).sum(axis=-1)
        rows = np.arange(start, stop)
        d2[rows - start, rows] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


def segment_sum(x, seg, n_seg):
    """Sum rows of x into n_seg buckets: out[seg[i]] += x[i], ascending i."""
    out = np.zeros((n_seg, x.shape[1]), dtype=x.dtype)
    np.add.at(out, seg, x)
    return out


def weighted_gather(x, idx, w):
    """out[i] = sum_c w[i, c] * x[idx[i, c]], accumulated in corner order c."""
    out = (w[:, 0:1] * x[idx[:, 0]]).astype(x.dtype, copy=False)
    for c in range(1, idx.shape[1]):
        out += w[:, c : c + 1] * x[idx[:, c]]
    return out


def weighted_gather_backward(idx, w, grad, n_rows):
    """Adjoint of weighted_gather w.r.t. x: scatter w[i,c]*grad[i] into rows."""
    gx = np.zeros((n_rows, grad.shape[1]), dtype=grad.dtype)
    for c in range(idx.shape[1]):
        np.add.at(gx, idx[:, c], w[:, c : c + 1] * grad)
    return gx


def group_max(x, gsize):
    """Max over consecutive groups of gsize rows; first-max ties.

    x: (n*gsize, C).  Returns (values (n, C), winner (n, C) int64) where
    winner holds global row indices into x.
    """
    n = x.shape[0] // gsize
    xr = x.reshape(n, gsize, x.shape[1])
    local = xr.argmax(axis=1)
    out = np.take_along_axis(xr, local[:, None, :], axis=1)[:, 0, :]
    arg = local.astype(np.int64) + (np.arange(n, dtype=np.int64) * gsize)[:, None]
    return out, arg


def group_max_backward(arg, grad, m):
    """Adjoint of group_max: route grad[i, ch] to row arg[i, ch], channel ch."""
    gx = np.zeros((m, grad.shape[1]), dtype=grad.dtype)
    cols = np.broadcast_to(np.arange(grad.shape[1]), arg.shape)
    np.add.at(gx, (arg, cols), grad)
    return gx
