"""Pure-numpy implementations of the hot kernels.

Drop-in fallback for the compiled extension in ``_kernels.pyx``; the two
must stay behaviourally interchangeable (same shapes, same dtypes,
accumulation in double precision). Selected at import by ``_backend``.
"""

from __future__ import annotations

import numpy as np


def corr_volume(f_prev: np.ndarray, f_cur: np.ndarray) -> np.ndarray:
    """All-pairs dot products between two (h, w, d) grids.

    Returns shape (h1, w1, h2, w2) in the input dtype; sums run in
    float64 regardless of input precision.
    """
    h1, w1, d = f_prev.shape
    h2, w2, _ = f_cur.shape
    a = f_prev.reshape(h1 * w1, d).astype(np.float64, copy=False)
    b = f_cur.reshape(h2 * w2, d).astype(np.float64, copy=False)
    vol = a @ b.T
    return vol.reshape(h1, w1, h2, w2).astype(f_prev.dtype, copy=False)


def avg_pool_last2(vol: np.ndarray) -> np.ndarray:
    """2x2 average pooling (stride 2) over the last two axes.

    Odd trailing dims are edge-replicated to even size first, so the
    output dims are ceil(h/2), ceil(w/2).
    """
    h1, w1, h2, w2 = vol.shape
    if h2 % 2:
        vol = np.concatenate([vol, vol[:, :, -1:, :]], axis=2)
        h2 += 1
    if w2 % 2:
        vol = np.concatenate([vol, vol[:, :, :, -1:]], axis=3)
        w2 += 1
    v = vol.reshape(h1, w1, h2 // 2, 2, w2 // 2, 2).astype(np.float64, copy=False)
    return v.mean(axis=(3, 5)).astype(vol.dtype, copy=False)


def lookup_level(vol: np.ndarray, shift: int, radius: int) -> np.ndarray:
    """Radius-bounded bilinear sampling of one pyramid level.

    For every source point (i, j) the target plane ``vol[i, j]`` is
    sampled at (i / 2**shift + dy, j / 2**shift + dx) for all integer
    offsets with max(|dy|, |dx|) <= radius, border-clamped. Offsets run
    row-major (dy outer, dx inner). Returns (h1, w1, (2R+1)**2).
    """
    h1, w1, hs, ws = vol.shape
    inv = 1.0 / (1 << shift)
    side = 2 * radius + 1
    out = np.empty((h1, w1, side * side), dtype=vol.dtype)
    vol64 = vol.astype(np.float64, copy=False)
    ii = np.arange(h1)[:, None]
    jj = np.arange(w1)[None, :]
    base_y = np.arange(h1) * inv
    base_x = np.arange(w1) * inv
    ch = 0
    for dy in range(-radius, radius + 1):
        py = np.clip(base_y + dy, 0.0, hs - 1.0)
        y0 = np.minimum(py.astype(np.int64), hs - 1)
        y1 = np.minimum(y0 + 1, hs - 1)
        fy = py - y0
        for dx in range(-radius, radius + 1):
            px = np.clip(base_x + dx, 0.0, ws - 1.0)
            x0 = np.minimum(px.astype(np.int64), ws - 1)
            x1 = np.minimum(x0 + 1, ws - 1)
            fx = px - x0
            v00 = vol64[ii, jj, y0[:, None], x0[None, :]]
            v01 = vol64[ii, jj, y0[:, None], x1[None, :]]
            v10 = vol64[ii, jj, y1[:, None], x0[None, :]]
            v11 = vol64[ii, jj, y1[:, None], x1[None, :]]
            wy = fy[:, None]
            wx = fx[None, :]
            out[:, :, ch] = (
                v00 * (1.0 - wy) * (1.0 - wx)
                + v01 * (1.0 - wy) * wx
                + v10 * wy * (1.0 - wx)
                + v11 * wy * wx
            ).astype(vol.dtype, copy=False)
            ch += 1
    return out


def bilinear_sample_hwc(data: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Border-clamped bilinear samples of an (h, w, c) grid.

    Cell values sit at integer coordinates; ``ys``/``xs`` are flat arrays
    of sample positions. Returns (n, c) in float64.
    """
    h, w, _ = data.shape
    py = np.clip(np.asarray(ys, dtype=np.float64), 0.0, h - 1.0)
    px = np.clip(np.asarray(xs, dtype=np.float64), 0.0, w - 1.0)
    y0 = np.minimum(py.astype(np.int64), h - 1)
    x0 = np.minimum(px.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (py - y0)[:, None]
    fx = (px - x0)[:, None]
    d = data.astype(np.float64, copy=False)
    return (
        d[y0, x0] * (1.0 - fy) * (1.0 - fx)
        + d[y0, x1] * (1.0 - fy) * fx
        + d[y1, x0] * fy * (1.0 - fx)
        + d[y1, x1] * fy * fx
    )
