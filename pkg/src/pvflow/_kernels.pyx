# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``.

Accumulation orders mirror the fallback exactly; see that module's docstring.
No fast-math: results must match the numpy path bit-for-bit.
"""

import numpy as np

cimport numpy as cnp

ctypedef fused real:
    float
    double


def knn_brute(real[:, ::1] positions, Py_ssize_t k):
    cdef Py_ssize_t n = positions.shape[0]
    cdef cnp.ndarray out_arr = np.empty((n, k), dtype=np.int64)
    cdef long long[:, ::1] out = out_arr
    cdef real[::1] bd
    cdef long long[::1] bi
    if real is float:
        bd = np.empty(k, dtype=np.float32)
    else:
        bd = np.empty(k, dtype=np.float64)
    bi = np.empty(k, dtype=np.int64)

    cdef Py_ssize_t i, j, c, pos, filled
    cdef real dx, dy, dz, d
    for i in range(n):
        filled = 0
        for j in range(n):
            if j == i:
                continue
            dx = positions[i, 0] - positions[j, 0]
            dy = positions[i, 1] - positions[j, 1]
            dz = positions[i, 2] - positions[j, 2]
            d = (dx * dx + dy * dy) + dz * dz
            if filled < k:
                pos = filled
                while pos > 0 and bd[pos - 1] > d:
                    bd[pos] = bd[pos - 1]
                    bi[pos] = bi[pos - 1]
                    pos -= 1
                bd[pos] = d
                bi[pos] = j
                filled += 1
            elif d < bd[k - 1]:
                # ties keep the earlier (lower) index, so strict < is enough
                pos = k - 1
                while pos > 0 and bd[pos - 1] > d:
                    bd[pos] = bd[pos - 1]
                    bi[pos] = bi[pos - 1]
                    pos -= 1
                bd[pos] = d
                bi[pos] = j
        for c in range(k):
            out[i, c] = bi[c]
    return out_arr


def segment_sum(real[:, ::1] x, long long[::1] seg, Py_ssize_t n_seg):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t nc = x.shape[1]
    cdef cnp.ndarray out_arr
    if real is float:
        out_arr = np.zeros((n_seg, nc), dtype=np.float32)
    else:
        out_arr = np.zeros((n_seg, nc), dtype=np.float64)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t i, c, s
    for i in range(m):
        s = seg[i]
        for c in range(nc):
            out[s, c] += x[i, c]
    return out_arr


def weighted_gather(real[:, ::1] x, long long[:, ::1] idx, real[:, ::1] w):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t k = idx.shape[1]
    cdef Py_ssize_t nc = x.shape[1]
    cdef cnp.ndarray out_arr
    if real is float:
        out_arr = np.zeros((n, nc), dtype=np.float32)
    else:
        out_arr = np.zeros((n, nc), dtype=np.float64)
    cdef real[:, ::1] out = out_arr
    cdef Py_ssize_t i, c, ch, r
    cdef real wt
    for i in range(n):
        for c in range(k):
            r = idx[i, c]
            wt = w[i, c]
            for ch in range(nc):
                out[i, ch] += wt * x[r, ch]
    return out_arr


def weighted_gather_backward(long long[:, ::1] idx, real[:, ::1] w,
                             real[:, ::1] grad, Py_ssize_t n_rows):
    cdef Py_ssize_t n = idx.shape[0]
    cdef Py_ssize_t k = idx.shape[1]
    cdef Py_ssize_t nc = grad.shape[1]
    cdef cnp.ndarray gx_arr
    if real is float:
        gx_arr = np.zeros((n_rows, nc), dtype=np.float32)
    else:
        gx_arr = np.zeros((n_rows, nc), dtype=np.float64)
    cdef real[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, c, ch, r
    cdef real wt
    # corner-major to match the fallback's per-corner np.add.at order
    for c in range(k):
        for i in range(n):
            r = idx[i, c]
            wt = w[i, c]
            for ch in range(nc):
                gx[r, ch] += wt * grad[i, ch]
    return gx_arr


def group_max(real[:, ::1] x, Py_ssize_t gsize):
    cdef Py_ssize_t n = x.shape[0] // gsize
    cdef Py_ssize_t nc = x.shape[1]
    cdef cnp.ndarray out_arr
    if real is float:
        out_arr = np.empty((n, nc), dtype=np.float32)
    else:
        out_arr = np.empty((n, nc), dtype=np.float64)
    cdef cnp.ndarray arg_arr = np.empty((n, nc), dtype=np.int64)
    cdef real[:, ::1] out = out_arr
    cdef long long[:, ::1] arg = arg_arr
    cdef Py_ssize_t i, j, ch, base, r
    for i in range(n):
        base = i * gsize
        for ch in range(nc):
            out[i, ch] = x[base, ch]
            arg[i, ch] = base
        for j in range(1, gsize):
            r = base + j
            for ch in range(nc):
                if x[r, ch] > out[i, ch]:
                    out[i, ch] = x[r, ch]
                    arg[i, ch] = r
    return out_arr, arg_arr


def group_max_backward(long long[:, ::1] arg, real[:, ::1] grad, Py_ssize_t m):
    cdef Py_ssize_t n = arg.shape[0]
    cdef Py_ssize_t nc = arg.shape[1]
    cdef cnp.ndarray gx_arr
    if real is float:
        gx_arr = np.zeros((m, nc), dtype=np.float32)
    else:
        gx_arr = np.zeros((m, nc), dtype=np.float64)
    cdef real[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, ch
    for i in range(n):
        for ch in range(nc):
            gx[arg[i, ch], ch] += grad[i, ch]
    return gx_arr
