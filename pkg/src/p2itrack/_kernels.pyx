# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: correlation volume, 2x2 pooling, pyramid lookup.

Behaviourally interchangeable with ``_kernels_py``; accumulation runs in
double precision for both float32 and float64 inputs.
"""

import numpy as np

cimport cython


ctypedef fused real_t:
    float
    double


def corr_volume(real_t[:, :, ::1] f_prev, real_t[:, :, ::1] f_cur):
    """All-pairs dot products between two (h, w, d) grids -> (h1, w1, h2, w2)."""
    cdef Py_ssize_t h1 = f_prev.shape[0], w1 = f_prev.shape[1], d = f_prev.shape[2]
    cdef Py_ssize_t h2 = f_cur.shape[0], w2 = f_cur.shape[1]
    cdef Py_ssize_t i, j, k, l, c
    cdef double acc

    if real_t is float:
        out_np = np.empty((h1, w1, h2, w2), dtype=np.float32)
    else:
        out_np = np.empty((h1, w1, h2, w2), dtype=np.float64)
    cdef real_t[:, :, :, ::1] out = out_np

    with nogil:
        for i in range(h1):
            for j in range(w1):
                for k in range(h2):
                    for l in range(w2):
                        acc = 0.0
                        for c in range(d):
                            acc += (<double> f_prev[i, j, c]) * (<double> f_cur[k, l, c])
                        out[i, j, k, l] = <real_t> acc
    return out_np


def avg_pool_last2(real_t[:, :, :, ::1] vol):
    """2x2/stride-2 average pool over the last two axes, edge-replicating odd dims."""
    cdef Py_ssize_t h1 = vol.shape[0], w1 = vol.shape[1]
    cdef Py_ssize_t h2 = vol.shape[2], w2 = vol.shape[3]
    cdef Py_ssize_t ho = (h2 + 1) // 2, wo = (w2 + 1) // 2
    cdef Py_ssize_t i, j, k, l, k0, k1, l0, l1
    cdef double acc

    if real_t is float:
        out_np = np.empty((h1, w1, ho, wo), dtype=np.float32)
    else:
        out_np = np.empty((h1, w1, ho, wo), dtype=np.float64)
    cdef real_t[:, :, :, ::1] out = out_np

    with nogil:
        for i in range(h1):
            for j in range(w1):
                for k in range(ho):
                    k0 = 2 * k
                    k1 = k0 + 1 if k0 + 1 < h2 else h2 - 1
                    for l in range(wo):
                        l0 = 2 * l
                        l1 = l0 + 1 if l0 + 1 < w2 else w2 - 1
                        acc = ((<double> vol[i, j, k0, l0]) + (<double> vol[i, j, k0, l1])
                               + (<double> vol[i, j, k1, l0]) + (<double> vol[i, j, k1, l1]))
                        out[i, j, k, l] = <real_t> (acc / 4.0)
    return out_np


def lookup_level(real_t[:, :, :, ::1] vol, int shift, int radius):
    """Radius-bounded bilinear sampling of one pyramid level.

    For each source point (i, j) the plane vol[i, j] is sampled at
    (i / 2**shift + dy, j / 2**shift + dx) for all offsets with
    max(|dy|, |dx|) <= radius, border-clamped; offsets row-major.
    Returns (h1, w1, (2R+1)**2).
    """
    cdef Py_ssize_t h1 = vol.shape[0], w1 = vol.shape[1]
    cdef Py_ssize_t hs = vol.shape[2], ws = vol.shape[3]
    cdef int side = 2 * radius + 1
    cdef double inv = 1.0 / (<double> (1 << shift))
    cdef Py_ssize_t i, j, ch
    cdef int dy, dx
    cdef double py, px, fy, fx, v00, v01, v10, v11
    cdef Py_ssize_t y0, y1, x0, x1

    if real_t is float:
        out_np = np.empty((h1, w1, side * side), dtype=np.float32)
    else:
        out_np = np.empty((h1, w1, side * side), dtype=np.float64)
    cdef real_t[:, :, ::1] out = out_np

    with nogil:
        for i in range(h1):
            for j in range(w1):
                ch = 0
                for dy in range(-radius, radius + 1):
                    py = i * inv + dy
                    if py < 0.0:
                        py = 0.0
                    elif py > hs - 1.0:
                        py = hs - 1.0
                    y0 = <Py_ssize_t> py
                    if y0 > hs - 1:
                        y0 = hs - 1
                    y1 = y0 + 1 if y0 + 1 < hs else hs - 1
                    fy = py - y0
                    for dx in range(-radius, radius + 1):
                        px = j * inv + dx
                        if px < 0.0:
                            px = 0.0
                        elif px > ws - 1.0:
                            px = ws - 1.0
                        x0 = <Py_ssize_t> px
                        if x0 > ws - 1:
                            x0 = ws - 1
                        x1 = x0 + 1 if x0 + 1 < ws else ws - 1
                        fx = px - x0
                        v00 = <double> vol[i, j, y0, x0]
                        v01 = <double> vol[i, j, y0, x1]
                        v10 = <double> vol[i, j, y1, x0]
                        v11 = <double> vol[i, j, y1, x1]
                        out[i, j, ch] = <real_t> (
                            v00 * (1.0 - fy) * (1.0 - fx)
                            + v01 * (1.0 - fy) * fx
                            + v10 * fy * (1.0 - fx)
                            + v11 * fy * fx)
                        ch += 1
    return out_np


def bilinear_sample_hwc(data, ys, xs):
    """Match the fallback helper; light enough that numpy carries it."""
    from . import _kernels_py
    return _kernels_py.bilinear_sample_hwc(data, ys, xs)
