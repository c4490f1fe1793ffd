"""Vehicle kinematics, rigid footprints and convex collision tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .errors import ActorNotFoundError, ValidationError

A_MAX_ABS = 8.0
STEER_MAX = 0.6
TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    return a


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class ActorState:
    x: float
    y: float
    heading: float
    speed: float
    actor_id: Any = None

    def __post_init__(self):
        if not _finite(self.x, self.y, self.heading, self.speed):
            raise ValidationError(f"non-finite actor state {self!r}")
        if self.speed < 0.0:
            raise ValidationError(f"negative speed {self.speed}")
        h = normalize_angle(self.heading)
        if h != self.heading:
            object.__setattr__(self, "heading", h)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def moved(self, dx: float = 0.0, dy: float = 0.0) -> "ActorState":
        return ActorState(self.x + dx, self.y + dy, self.heading, self.speed, self.actor_id)

    def to_dict(self) -> dict:
        return {"id": self.actor_id, "x": self.x, "y": self.y,
                "heading": self.heading, "speed": self.speed}


@dataclass(frozen=True)
class ControlInput:
    accel: float = 0.0
    steer: float = 0.0
    a_max_abs: float = field(default=A_MAX_ABS, repr=False, compare=False)
    steer_max: float = field(default=STEER_MAX, repr=False, compare=False)

    def __post_init__(self):
        if not _finite(self.accel, self.steer):
            raise ValidationError("non-finite control input")
        if abs(self.accel) > self.a_max_abs + 1e-12:
            raise ValidationError(f"|accel| {self.accel} exceeds {self.a_max_abs}")
        if abs(self.steer) > self.steer_max + 1e-12:
            raise ValidationError(f"|steer| {self.steer} exceeds {self.steer_max}")

    @classmethod
    def clamped(cls, accel: float, steer: float, a_min: float = -A_MAX_ABS,
                a_max: float = A_MAX_ABS, steer_max: float = STEER_MAX) -> "ControlInput":
        accel = min(max(accel, a_min), a_max)
        steer = min(max(steer, -steer_max), steer_max)
        return cls(accel, steer)


@dataclass(frozen=True)
class VehicleShape:
    length: float
    width: float
    wheelbase: float
    kind: str = "sedan"

    def __post_init__(self):
        if not _finite(self.length, self.width, self.wheelbase):
            raise ValidationError("non-finite vehicle shape")
        if not (0.0 < self.wheelbase < self.length) or self.width <= 0.0:
            raise ValidationError(f"invalid vehicle shape {self!r}")

    @property
    def half_diagonal(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "length": self.length, "width": self.width,
                "wheelbase": self.wheelbase}


def advance(x: float, y: float, heading: float, speed: float, accel: float,
            curvature: float, dt: float) -> tuple[float, float, float, float]:
    """One bicycle-model step expressed through path curvature tan(steer)/wheelbase.

    Speed clamps at zero; the position moves at the mean of old and new speed
    along the midpoint heading.
    """
    new_speed = speed + accel * dt
    if new_speed < 0.0:
        new_speed = 0.0
    dheading = speed * curvature * dt
    mid = heading + 0.5 * dheading
    dist = 0.5 * (speed + new_speed) * dt
    return (x + dist * math.cos(mid), y + dist * math.sin(mid),
            normalize_angle(heading + dheading), new_speed)


def step_kinematics(state: ActorState, u: ControlInput, shape: VehicleShape,
                    dt: float) -> ActorState:
    if not (math.isfinite(dt) and dt > 0.0):
        raise ValidationError(f"dt must be positive and finite, got {dt}")
    curvature = math.tan(u.steer) / shape.wheelbase
    x, y, h, v = advance(state.x, state.y, state.heading, state.speed,
                         u.accel, curvature, dt)
    return ActorState(x, y, h, v, state.actor_id)


_BODY_CORNERS = np.array([(0.5, -0.5), (0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5)])


def rectangles(xs, ys, headings, length: float, width: float) -> np.ndarray:
    """Vectorized oriented rectangles, shape (n, 4, 2), counter-clockwise."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    hs = np.atleast_1d(np.asarray(headings, dtype=float))
    c, s = np.cos(hs)[:, None], np.sin(hs)[:, None]
    bx = _BODY_CORNERS[:, 0] * length
    by = _BODY_CORNERS[:, 1] * width
    out = np.empty((len(xs), 4, 2))
    out[:, :, 0] = xs[:, None] + c * bx - s * by
    out[:, :, 1] = ys[:, None] + s * bx + c * by
    return out


def footprint_polygon(state: ActorState, shape: VehicleShape) -> np.ndarray:
    """Oriented rectangle (4x2, counter-clockwise) centered on the actor."""
    return rectangles(state.x, state.y, state.heading, shape.length, shape.width)[0]


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygons_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test: True iff the convex polygons share positive area."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for poly in (a, b):
        if poly.ndim != 2 or poly.shape[0] < 3 or abs(polygon_area(poly)) < 1e-12:
            raise ValidationError("degenerate polygon")
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        pa = a @ normals.T
        pb = b @ normals.T
        scale = np.maximum(np.abs(pa).max(axis=0), np.abs(pb).max(axis=0)) + 1.0
        sep = (pa.max(axis=0) <= pb.min(axis=0) + 1e-12 * scale) | (
            pb.max(axis=0) <= pa.min(axis=0) + 1e-12 * scale)
        if sep.any():
            return False
    return True


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot handed to policies.

    ``routes`` maps actor ids to their route progress records; ``map`` is a
    :class:`sffsim.roadmap.MapGraph`.
    """

    time: float
    actors: tuple
    lights: tuple = ()
    map: Any = None
    routes: Mapping = field(default_factory=dict)
    frozen_ids: frozenset = frozenset()

    def __post_init__(self):
        ids = [s.actor_id for s, _ in self.actors]
        if len(set(ids)) != len(ids):
            raise ValidationError("actor ids must be unique")

    @cached_property
    def ids(self) -> dict:
        return {s.actor_id: i for i, (s, _) in enumerate(self.actors)}

    @cached_property
    def arrays(self) -> dict:
        """Column arrays of the actor states and shapes, computed once per snapshot."""
        st = [s for s, _ in self.actors]
        sh = [b for _, b in self.actors]
        return {"x": np.array([s.x for s in st]), "y": np.array([s.y for s in st]),
                "heading": np.array([s.heading for s in st]),
                "speed": np.array([s.speed for s in st]),
                "length": np.array([b.length for b in sh]),
                "width": np.array([b.width for b in sh])}

    def memo(self, key, fn):
        """Compute ``fn(self)`` once per snapshot and keep the result."""
        store = self.__dict__.setdefault("_memo", {})
        if key not in store:
            store[key] = fn(self)
        return store[key]

    def index(self, actor_id) -> int:
        try:
            return self.ids[actor_id]
        except KeyError:
            raise ActorNotFoundError(f"actor {actor_id!r} not present") from None

    def actor(self, actor_id) -> tuple[ActorState, VehicleShape]:
        return self.actors[self.index(actor_id)]

    def replace_actor(self, state: ActorState) -> "WorldState":
        i = self.index(state.actor_id)
        actors = list(self.actors)
        actors[i] = (state, actors[i][1])
        return WorldState(self.time, tuple(actors), self.lights, self.map,
                          self.routes, self.frozen_ids)

    def light(self, node_id):
        for lt in self.lights:
            if lt.intersection_id == node_id:
                return lt
        return None
