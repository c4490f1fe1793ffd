"""Pure numpy implementations of the rasterization kernels.

Used when the compiled extension is unavailable or ``SFFSIM_PURE_PYTHON=1``.
The inside test performs the same floating point operations as the compiled
version so both backends stamp identical cells.
"""

import math

import numpy as np


def stamp_polygons(grid, polys):
    """Set every cell whose center lies inside any polygon to 1.

    ``grid`` is a C-contiguous uint8 array indexed [row, col]; ``polys`` is an
    (n, m, 2) float array of counter-clockwise convex polygons expressed in cell
    units, so the center of cell (row, col) sits at (col + 0.5, row + 0.5).
    """
    h, w = grid.shape
    m = polys.shape[1]
    for poly in polys:
        x0 = max(0, int(math.floor(poly[:, 0].min() - 0.5)))
        x1 = min(w - 1, int(math.ceil(poly[:, 0].max() - 0.5)))
        y0 = max(0, int(math.floor(poly[:, 1].min() - 0.5)))
        y1 = min(h - 1, int(math.ceil(poly[:, 1].max() - 0.5)))
        if x0 > x1 or y0 > y1:
            continue
        px = np.arange(x0, x1 + 1, dtype=float) + 0.5
        py = (np.arange(y0, y1 + 1, dtype=float) + 0.5)[:, None]
        inside = np.ones((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
        for k in range(m):
            ax, ay = poly[k]
            bx, by = poly[(k + 1) % m]
            inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
        grid[y0:y1 + 1, x0:x1 + 1] |= inside.astype(np.uint8)
    return grid


def convolve_clamped(grid, kernel):
    """Zero-padded 'same' convolution of an occupancy grid, clamped to [0, 1]."""
    h, w = grid.shape
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    src = grid.astype(float)
    out = np.zeros((h, w))
    # descending tap order reproduces the compiled kernel's accumulation order
    for dy in range(ry, -ry - 1, -1):
        for dx in range(rx, -rx - 1, -1):
            wgt = kernel[dy + ry, dx + rx]
            if wgt == 0.0:
                continue
            ys, ye = max(0, dy), min(h, h + dy)
            xs, xe = max(0, dx), min(w, w + dx)
            out[ys:ye, xs:xe] += src[ys - dy:ye - dy, xs - dx:xe - dx] * wgt
    np.clip(out, 0.0, 1.0, out=out)
    return out


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points):
    """Andrew's monotone chain; counter-clockwise, collinear points dropped."""
    pts = sorted(map(tuple, points))
    lower, upper = [], []
    for q in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], q) <= 0.0:
            lower.pop()
        lower.append(q)
    for q in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], q) <= 0.0:
            upper.pop()
        upper.append(q)
    return lower[:-1] + upper[:-1]


def stamp_hulls(grid, pts):
    """Stamp the convex hull of each (m, 2) point set in ``pts``."""
    m = pts.shape[1]
    for item in pts:
        hull = convex_hull(item)
        if len(hull) < 3:
            continue
        hull = hull + [hull[-1]] * (2 * m - len(hull))
        stamp_polygons(grid, np.array([hull], dtype=float))
    return grid
