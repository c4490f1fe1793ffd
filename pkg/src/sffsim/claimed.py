"""Claimed sets: rasterized unions of safety-procedure sweeps and their mollified fields."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import ValidationError, WindowOverflowError
from .procedure import SafetyProcedure, rollout_arrays
from .world import ActorState, VehicleShape, rectangles


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned raster window; cell (row, col) covers
    [ox + col*cell, ox + (col+1)*cell) x [oy + row*cell, oy + (row+1)*cell)."""

    ox: float
    oy: float
    cell: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.cell > 0.0 and math.isfinite(self.cell)):
            raise ValidationError(f"cell size must be positive, got {self.cell}")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("grid width and height must be positive")
        if not (math.isfinite(self.ox) and math.isfinite(self.oy)):
            raise ValidationError("non-finite grid origin")

    @classmethod
    def centered(cls, cx: float, cy: float, size_x: float, size_y: float,
                 cell: float) -> "GridSpec":
        w = max(1, int(round(size_x / cell)))
        h = max(1, int(round(size_y / cell)))
        return cls(cx - 0.5 * w * cell, cy - 0.5 * h * cell, cell, w, h)

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    @property
    def extent(self) -> tuple:
        return (self.ox, self.oy, self.ox + self.width * self.cell,
                self.oy + self.height * self.cell)

    @property
    def cell_area(self) -> float:
        return self.cell * self.cell

    def centers(self) -> tuple:
        xs = self.ox + (np.arange(self.width) + 0.5) * self.cell
        ys = self.oy + (np.arange(self.height) + 0.5) * self.cell
        return xs, ys

    def to_cells(self, pts: np.ndarray) -> np.ndarray:
        out = np.empty_like(pts, dtype=float)
        out[..., 0] = (pts[..., 0] - self.ox) / self.cell
        out[..., 1] = (pts[..., 1] - self.oy) / self.cell
        return out

    def to_dict(self) -> dict:
        return {"ox": self.ox, "oy": self.oy, "cell": self.cell,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(float(d["ox"]), float(d["oy"]), float(d["cell"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class ClaimedSetGrid:
    spec: GridSpec
    occupancy: np.ndarray

    def __post_init__(self):
        if self.occupancy.shape != self.spec.shape:
            raise ValidationError("occupancy shape does not match grid spec")

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    def __eq__(self, other):
        return (isinstance(other, ClaimedSetGrid) and self.spec == other.spec
                and np.array_equal(self.occupancy, other.occupancy))

    __hash__ = None


@dataclass(frozen=True)
class SmoothField:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.spec.shape:
            raise ValidationError("field shape does not match grid spec")

    def to_pgm(self, path) -> None:
        """Write a 16-bit binary PGM, north (max y) on the top row."""
        data = np.clip(np.round(self.values[::-1] * 65535.0), 0, 65535).astype(">u2")
        h, w = data.shape
        with open(path, "wb") as fh:
            fh.write(b"P5\n%d %d\n65535\n" % (w, h))
            fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValidationError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4][: w * h * 2], dtype=">u2").reshape(h, w)
    return data[::-1].astype(float) / maxval


@dataclass(frozen=True)
class MollifierKernel:
    radius: float
    cell: float
    taps: np.ndarray

    @property
    def half_width(self) -> int:
        return self.taps.shape[0] // 2


def bump(d: np.ndarray, radius: float) -> np.ndarray:
    """Standard bump exp(-1 / (1 - (d/r)^2)) with compact support d < r."""
    q = (np.asarray(d, dtype=float) / radius) ** 2
    out = np.zeros_like(q)
    inside = q < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - q[inside]))
    return out


def mollifier_kernel(radius: float, cell: float, identity: bool = False) -> MollifierKernel:
    if not (cell > 0.0):
        raise ValidationError("cell size must be positive")
    if identity:
        return MollifierKernel(radius, cell, np.ones((1, 1)))
    if radius < cell:
        raise ValidationError(
            f"mollifier radius {radius} is below the cell size {cell}; pass identity=True")
    r = int(math.floor(radius / cell + 1e-9))
    idx = np.arange(-r, r + 1) * cell
    d = np.hypot(idx[None, :], idx[:, None])
    taps = bump(d, radius)
    taps /= taps.sum()
    taps.flags.writeable = False
    return MollifierKernel(radius, cell, taps)


def policy_groups(shape: VehicleShape, proc: SafetyProcedure) -> list:
    """Policies grouped by braking level as lists of (accel, curvature)."""
    groups: dict = {}
    for p in proc.policies:
        groups.setdefault(p.decel, []).append((-p.decel, p.curvature(shape)))
    return [groups[d] for d in sorted(groups)]


def sweep_hulls(state: ActorState, shape: VehicleShape, groups, horizon: float,
                dt: float) -> np.ndarray:
    """Point sets whose convex hulls make up the claimed set, shape (n, m, 2).

    Within a group of actions the footprints at each time step are joined by
    their convex hull, which fills the lateral gap between neighbouring
    steering levels; a finished (stopped) rollout holds its final pose.
    """
    items = []
    for group in groups:
        rolls = [rollout_arrays(state.x, state.y, state.heading, state.speed, accel,
                                curvature, horizon, dt) for accel, curvature in group]
        n = max(len(r) for r in rolls)
        per_member = []
        for r in rolls:
            if len(r) < n:
                r = np.concatenate([r, np.repeat(r[-1:], n - len(r), axis=0)])
            per_member.append(rectangles(r[:, 0], r[:, 1], r[:, 2], shape.length, shape.width))
        items.append(np.concatenate(per_member, axis=1))
    m = max(it.shape[1] for it in items)
    items = [it if it.shape[1] == m else
             np.concatenate([it, np.repeat(it[:, -1:], m - it.shape[1], axis=1)], axis=1)
             for it in items]
    return np.concatenate(items, axis=0)


def stamp(spec: GridSpec, pts: np.ndarray, check_window: bool = True,
          hulls: bool = True) -> np.ndarray:
    """Binary raster of the union of convex hulls (cell centers inside).

    With ``hulls=False`` the point sets must already be CCW convex polygons.
    """
    pts = np.asarray(pts, dtype=float)
    if check_window and len(pts):
        x0, y0, x1, y1 = spec.extent
        lo = pts.reshape(-1, 2).min(axis=0)
        hi = pts.reshape(-1, 2).max(axis=0)
        if lo[0] < x0 or lo[1] < y0 or hi[0] > x1 or hi[1] > y1:
            raise WindowOverflowError(
                f"claimed-set envelope [{lo[0]:.2f}, {hi[0]:.2f}] x [{lo[1]:.2f}, {hi[1]:.2f}] "
                f"exceeds grid window [{x0:.2f}, {x1:.2f}] x [{y0:.2f}, {y1:.2f}]",
                needed_extent=(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])))
    grid = np.zeros(spec.shape, dtype=np.uint8)
    if len(pts):
        cells = np.ascontiguousarray(spec.to_cells(pts))
        if hulls:
            kernels.stamp_hulls(grid, cells)
        else:
            kernels.stamp_polygons(grid, cells)
    return grid


def coverage(spec: GridSpec, pts: np.ndarray, supersample: int) -> np.ndarray:
    """Fraction of each cell covered by the union of hulls.

    Estimated from a ``supersample`` x ``supersample`` lattice of sample points
    per cell. Unlike center sampling, the result moves by a small step when the
    set boundary moves by less than a cell.
    """
    s = int(supersample)
    if s < 1:
        raise ValidationError("supersample must be >= 1")
    fine = GridSpec(spec.ox, spec.oy, spec.cell / s, spec.width * s, spec.height * s)
    hits = stamp(fine, pts)
    return hits.reshape(spec.height, s, spec.width, s).mean(axis=(1, 3))


def claimed_set(state: ActorState, shape: VehicleShape, proc: SafetyProcedure,
                spec: GridSpec) -> ClaimedSetGrid:
    """Rasterized union of every trajectory the safety procedure can produce."""
    groups = policy_groups(shape, proc)
    return ClaimedSetGrid(spec, stamp(spec, sweep_hulls(state, shape, groups, proc.horizon,
                                                        proc.dt)))


def _convolve(occ: np.ndarray, k: MollifierKernel) -> np.ndarray:
    occ = np.ascontiguousarray(occ, dtype=float)
    if k.taps.shape == (1, 1):
        return np.clip(occ * k.taps[0, 0], 0.0, 1.0)
    return kernels.convolve_clamped(occ, np.ascontiguousarray(k.taps))


def mollify(g: ClaimedSetGrid, k: MollifierKernel) -> SmoothField:
    if not math.isclose(g.spec.cell, k.cell, rel_tol=1e-12):
        raise ValidationError(f"kernel cell {k.cell} does not match grid cell {g.spec.cell}")
    return SmoothField(g.spec, _convolve(g.occupancy, k))


# ----------------------------------------------------------------------------
# Actor-anchored windows and the shared lattice used for pair potentials.

def actor_window(state: ActorState, shape: VehicleShape, reach: float, pad: float,
                 cell: float) -> GridSpec:
    """Square window whose center is exactly the actor position.

    Anchoring the raster at the actor makes it depend on heading and speed only,
    so translating the actor translates the field exactly.
    """
    n = int(math.ceil((reach + shape.half_diagonal + pad) / cell)) + 1
    return GridSpec(state.x - n * cell, state.y - n * cell, cell, 2 * n, 2 * n)


def anchored_values(heading: float, speed: float, shape: VehicleShape, groups,
                    horizon: float, dt: float, reach: float | None, kradius: float,
                    cell: float, identity: bool = False, supersample: int = 4) -> np.ndarray:
    """Mollified claimed set of an actor at the origin, on its actor-centered window.

    ``groups`` holds lists of (accel, curvature) actions as in :func:`policy_groups`.
    With ``reach=None`` the window is sized from the swept points themselves.
    """
    origin = ActorState(0.0, 0.0, heading, speed)
    k = mollifier_kernel(kradius, cell, identity)
    pad = k.half_width * cell + cell
    pts = sweep_hulls(origin, shape, groups, horizon, dt)
    if reach is None:
        reach = max(float(np.abs(pts).max()) - shape.half_diagonal, 0.0)
    spec = actor_window(origin, shape, reach, pad, cell)
    if supersample == 1:
        occ = stamp(spec, pts)
    else:
        occ = coverage(spec, pts, supersample)
    return _convolve(occ, k)


@lru_cache(maxsize=4096)
def _anchored_field(heading: float, speed: float, shape: VehicleShape,
                    proc: SafetyProcedure, kradius: float, cell: float,
                    identity: bool, supersample: int) -> np.ndarray:
    values = anchored_values(heading, speed, shape, policy_groups(shape, proc), proc.horizon,
                             proc.dt, proc.reach(speed), kradius, cell, identity, supersample)
    values.flags.writeable = False
    return values


@dataclass(frozen=True)
class LatticeField:
    """Field sampled on the global lattice with cell centers at ((i+0.5)c, (j+0.5)c)."""

    col0: int
    row0: int
    cell: float
    values: np.ndarray

    @property
    def spec(self) -> GridSpec:
        h, w = self.values.shape
        return GridSpec(self.col0 * self.cell, self.row0 * self.cell, self.cell, w, h)

    def as_field(self) -> SmoothField:
        return SmoothField(self.spec, self.values)


def _bspline(t):
    t = np.abs(t)
    return np.where(t < 1.0, 2.0 / 3.0 - t * t + 0.5 * t ** 3,
                    np.where(t < 2.0, (2.0 - t) ** 3 / 6.0, 0.0))


def _resample_axis(values: np.ndarray, frac: float, axis: int) -> np.ndarray:
    weights = _bspline(np.arange(-1, 3) - frac)
    n = values.shape[axis]
    shape = list(values.shape)
    shape[axis] = n + 3
    out = np.zeros(shape)
    for k, wgt in enumerate(weights):
        if wgt == 0.0:
            continue
        sl = [slice(None)] * values.ndim
        sl[axis] = slice(k, k + n)
        out[tuple(sl)] += wgt * values
    return out


def to_lattice(field: SmoothField) -> LatticeField:
    """Resample a field onto the global lattice with a cubic B-spline.

    The B-spline weights are non-negative, sum to one and are twice
    differentiable in the sub-cell offset, so the overlap integral between two
    resampled fields is smooth in either actor's position.
    """
    c = field.spec.cell
    tx, ty = field.spec.ox / c, field.spec.oy / c
    mx, my = math.floor(tx), math.floor(ty)
    vals = _resample_axis(field.values, tx - mx, axis=1)
    vals = _resample_axis(vals, ty - my, axis=0)
    return LatticeField(int(mx) - 1, int(my) - 1, c, vals)


def actor_lattice_field(state: ActorState, shape: VehicleShape, proc: SafetyProcedure,
                        kernel_radius: float = 1.5, cell: float = 0.5,
                        identity: bool = False, supersample: int = 4) -> LatticeField:
    """Mollified claimed set of one actor, resampled onto the global lattice.

    The set is rasterized as fractional cell coverage (``supersample`` points
    per cell side) so that the field shrinks smoothly as the actor brakes.
    """
    values = _anchored_field(state.heading, state.speed, shape, proc,
                             kernel_radius, cell, identity, int(supersample))
    return place_anchored(state, values, cell)


def place_anchored(state: ActorState, values: np.ndarray, cell: float) -> LatticeField:
    """Put an actor-centered window at the actor's position on the global lattice."""
    n = values.shape[0] // 2
    spec = GridSpec(state.x - n * cell, state.y - n * cell, cell, 2 * n, 2 * n)
    return to_lattice(SmoothField(spec, values))


def clear_caches() -> None:
    _anchored_field.cache_clear()
