# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled rasterization kernels (see _pykernels for the reference versions).

Arithmetic in the inside test and the hull construction mirrors the numpy
versions operation for operation, so both backends stamp identical cells.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil

cnp.import_array()


cdef inline double _cross(double ox, double oy, double ax, double ay, double bx, double by) noexcept nogil:
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


cdef void _stamp(cnp.uint8_t[:, ::1] grid, const double[::1] px_, const double[::1] py_,
                 Py_ssize_t m) noexcept nogil:
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1]
    cdef Py_ssize_t k, r, c, k1, x0, x1, y0, y1
    cdef double minx = px_[0], maxx = px_[0], miny = py_[0], maxy = py_[0]
    cdef double px, py, ax, ay, bx, by
    cdef bint inside
    for k in range(1, m):
        if px_[k] < minx: minx = px_[k]
        if px_[k] > maxx: maxx = px_[k]
        if py_[k] < miny: miny = py_[k]
        if py_[k] > maxy: maxy = py_[k]
    if maxx < -1.0 or maxy < -1.0 or minx > w + 1.0 or miny > h + 1.0:
        return
    x0 = <Py_ssize_t>floor(minx - 0.5)
    x1 = <Py_ssize_t>ceil(maxx - 0.5)
    y0 = <Py_ssize_t>floor(miny - 0.5)
    y1 = <Py_ssize_t>ceil(maxy - 0.5)
    if x0 < 0: x0 = 0
    if y0 < 0: y0 = 0
    if x1 > w - 1: x1 = w - 1
    if y1 > h - 1: y1 = h - 1
    for r in range(y0, y1 + 1):
        py = r + 0.5
        for c in range(x0, x1 + 1):
            if grid[r, c]:
                continue
            px = c + 0.5
            inside = True
            for k in range(m):
                k1 = k + 1
                if k1 == m:
                    k1 = 0
                ax = px_[k]
                ay = py_[k]
                bx = px_[k1]
                by = py_[k1]
                if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < 0.0:
                    inside = False
                    break
            if inside:
                grid[r, c] = 1


def stamp_polygons(cnp.uint8_t[:, ::1] grid, const double[:, :, ::1] polys):
    """Set every cell whose center lies inside any CCW convex polygon to 1."""
    cdef Py_ssize_t n = polys.shape[0], m = polys.shape[1], p, k
    xs_arr = np.empty(m)
    ys_arr = np.empty(m)
    cdef double[::1] xs = xs_arr, ys = ys_arr
    for p in range(n):
        for k in range(m):
            xs[k] = polys[p, k, 0]
            ys[k] = polys[p, k, 1]
        _stamp(grid, xs, ys, m)
    return np.asarray(grid)


def stamp_hulls(cnp.uint8_t[:, ::1] grid, const double[:, :, ::1] pts):
    """Stamp the convex hull of each (m, 2) point set (monotone chain hull)."""
    cdef Py_ssize_t n = pts.shape[0], m = pts.shape[1]
    cdef Py_ssize_t p, i, j, k, t
    cdef double tx, ty
    xs_arr = np.empty(m)
    ys_arr = np.empty(m)
    hx_arr = np.empty(2 * m + 1)
    hy_arr = np.empty(2 * m + 1)
    cdef double[::1] xs = xs_arr, ys = ys_arr, hx = hx_arr, hy = hy_arr
    for p in range(n):
        for i in range(m):
            xs[i] = pts[p, i, 0]
            ys[i] = pts[p, i, 1]
        for i in range(1, m):
            tx = xs[i]
            ty = ys[i]
            j = i - 1
            while j >= 0 and (xs[j] > tx or (xs[j] == tx and ys[j] > ty)):
                xs[j + 1] = xs[j]
                ys[j + 1] = ys[j]
                j -= 1
            xs[j + 1] = tx
            ys[j + 1] = ty
        k = 0
        for i in range(m):
            while k >= 2 and _cross(hx[k - 2], hy[k - 2], hx[k - 1], hy[k - 1], xs[i], ys[i]) <= 0.0:
                k -= 1
            hx[k] = xs[i]
            hy[k] = ys[i]
            k += 1
        t = k + 1
        for i in range(m - 2, -1, -1):
            while k >= t and _cross(hx[k - 2], hy[k - 2], hx[k - 1], hy[k - 1], xs[i], ys[i]) <= 0.0:
                k -= 1
            hx[k] = xs[i]
            hy[k] = ys[i]
            k += 1
        k -= 1
        if k < 3:
            continue
        _stamp(grid, hx, hy, k)
    return np.asarray(grid)


def convolve_clamped(const double[:, ::1] grid, const double[:, ::1] kernel):
    """Zero-padded 'same' convolution of an occupancy grid, clamped to [0, 1]."""
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t ry = kh // 2, rx = kw // 2
    cdef Py_ssize_t r, c, dy, dx, rr, cc
    cdef double g
    out_arr = np.zeros((h, w))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(h):
            for c in range(w):
                g = grid[r, c]
                if g == 0.0:
                    continue
                for dy in range(-ry, ry + 1):
                    rr = r + dy
                    if rr < 0 or rr >= h:
                        continue
                    for dx in range(-rx, rx + 1):
                        cc = c + dx
                        if cc < 0 or cc >= w:
                            continue
                        out[rr, cc] += kernel[dy + ry, dx + rx] * g
        for r in range(h):
            for c in range(w):
                if out[r, c] > 1.0:
                    out[r, c] = 1.0
    return out_arr
