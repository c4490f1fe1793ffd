"""Grid-town road network: lanes, intersections, traffic lights and routing."""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx
import numpy as np

from .errors import RoutingError, ValidationError

LANE_WIDTH = 3.5
LATERAL_ACCEL_LIMIT = 2.5  # m/s^2, sets speed limits on curved connectors
UTURN_REACH = 8.0


@dataclass(frozen=True)
class LightCycle:
    green: float = 10.0
    yellow: float = 3.0
    red: float = 13.0

    def __post_init__(self):
        if min(self.green, self.yellow, self.red) <= 0.0:
            raise ValidationError("light phase durations must be positive")
        if not math.isclose(self.red, self.green + self.yellow):
            raise ValidationError("red must cover the crossing axis' green + yellow")

    @property
    def period(self) -> float:
        return self.green + self.yellow + self.red

    def phase(self, axis: str, t: float) -> str:
        """Phase of the EW or NS approach pair at local cycle time ``t``."""
        u = t % self.period
        if axis == "NS":
            u = (u - (self.green + self.yellow)) % self.period
        if u < self.green:
            return "Green"
        if u < self.green + self.yellow:
            return "Yellow"
        return "Red"

    def to_dict(self) -> dict:
        return {"green": self.green, "yellow": self.yellow, "red": self.red}


@dataclass(frozen=True)
class TrafficLightState:
    intersection_id: str
    phases: tuple  # ((axis, phase), ...)
    cycle: LightCycle

    def phase(self, axis: str) -> str:
        return dict(self.phases)[axis]


@dataclass(frozen=True)
class Intersection:
    node_id: str
    x: float
    y: float
    half_size: float
    signalized: bool = True
    offset: float = 0.0


@dataclass(frozen=True, eq=False)
class Lane:
    lane_id: str
    points: np.ndarray
    width: float
    speed_limit: float
    src: str
    dst: str
    kind: str = "road"  # road | connector
    axis: str = ""  # travel axis of a road lane, EW or NS
    turn: str = ""  # straight / left / right / uturn for connectors
    index: int = 0  # position counted from the road center line

    @cached_property
    def cum(self) -> np.ndarray:
        seg = np.hypot(*np.diff(self.points, axis=0).T)
        return np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        return np.array([np.interp(s, self.cum, self.points[:, 0]),
                         np.interp(s, self.cum, self.points[:, 1])])

    def heading_at(self, s: float) -> float:
        i = int(np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.points) - 2))
        d = self.points[i + 1] - self.points[i]
        return math.atan2(d[1], d[0])

    def to_dict(self) -> dict:
        return {"id": self.lane_id, "points": self.points.tolist(), "width": self.width,
                "speed_limit": self.speed_limit, "src": self.src, "dst": self.dst,
                "kind": self.kind, "axis": self.axis, "turn": self.turn, "index": self.index}


@dataclass(frozen=True, eq=False)
class MapGraph:
    intersections: dict
    lanes: dict
    successors: dict
    cycle: LightCycle = field(default_factory=LightCycle)

    @cached_property
    def graph(self) -> nx.DiGraph:
        """Lane graph; an edge u -> v weighs the length of u."""
        g = nx.DiGraph()
        g.add_nodes_from(self.lanes)
        for u, vs in self.successors.items():
            for v in vs:
                g.add_edge(u, v, weight=self.lanes[u].length)
        return g

    @cached_property
    def road_lanes(self) -> tuple:
        return tuple(k for k, ln in self.lanes.items() if ln.kind == "road")

    @cached_property
    def neighbors(self) -> dict:
        """Adjacent same-direction road lanes, keyed by lane id."""
        groups: dict = {}
        for k in self.road_lanes:
            ln = self.lanes[k]
            groups.setdefault((ln.src, ln.dst), []).append(ln)
        out = {}
        for lanes in groups.values():
            by_index = {ln.index: ln.lane_id for ln in lanes}
            for ln in lanes:
                out[ln.lane_id] = tuple(by_index[j] for j in (ln.index - 1, ln.index + 1)
                                        if j in by_index)
        return out

    def is_strongly_connected(self) -> bool:
        return nx.is_strongly_connected(self.graph)

    def lights(self, t: float) -> tuple:
        out = []
        for node in self.intersections.values():
            if node.signalized:
                u = t - node.offset
                out.append(TrafficLightState(
                    node.node_id, (("EW", self.cycle.phase("EW", u)),
                                   ("NS", self.cycle.phase("NS", u))), self.cycle))
        return tuple(out)

    def phase_at(self, node_id: str, axis: str, t: float) -> str:
        node = self.intersections[node_id]
        if not node.signalized:
            return "Green"
        return self.cycle.phase(axis, t - node.offset)

    @property
    def bounds(self) -> tuple:
        pts = np.concatenate([ln.points for ln in self.lanes.values()])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    @cached_property
    def drivable(self) -> "DrivableMask":
        return DrivableMask.build(self)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "intersections": [{"id": n.node_id, "x": n.x, "y": n.y, "half_size": n.half_size,
                               "signalized": n.signalized, "offset": n.offset}
                              for n in self.intersections.values()],
            "lanes": [ln.to_dict() for ln in self.lanes.values()],
            "successors": {k: list(v) for k, v in self.successors.items()},
            "cycle": self.cycle.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MapGraph":
        nodes = {n["id"]: Intersection(n["id"], n["x"], n["y"], n["half_size"],
                                       n["signalized"], n["offset"])
                 for n in d["intersections"]}
        lanes = {ln["id"]: Lane(ln["id"], np.asarray(ln["points"], dtype=float), ln["width"],
                                ln["speed_limit"], ln["src"], ln["dst"], ln["kind"],
                                ln["axis"], ln["turn"], ln["index"])
                 for ln in d["lanes"]}
        succ = {k: tuple(v) for k, v in d["successors"].items()}
        return cls(nodes, lanes, succ, LightCycle(**d["cycle"]))

    @classmethod
    def from_json(cls, text: str) -> "MapGraph":
        return cls.from_dict(json.loads(text))


# ----------------------------------------------------------------------------
# Construction


def _bezier(p0, c0, c1, p1, step: float = 0.5) -> np.ndarray:
    approx = (np.linalg.norm(c0 - p0) + np.linalg.norm(c1 - c0) + np.linalg.norm(p1 - c1))
    n = max(2, int(math.ceil(approx / step)) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    return ((1 - t) ** 3 * p0 + 3 * (1 - t) ** 2 * t * c0 + 3 * (1 - t) * t ** 2 * c1
            + t ** 3 * p1)


def max_curvature(points: np.ndarray) -> float:
    if len(points) < 3:
        return 0.0
    a, b, c = points[:-2], points[1:-1], points[2:]
    ab = np.linalg.norm(b - a, axis=1)
    bc = np.linalg.norm(c - b, axis=1)
    ca = np.linalg.norm(a - c, axis=1)
    cross = np.abs((b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(ab * bc * ca > 0, 2.0 * cross / (ab * bc * ca), 0.0)
    return float(k.max())


def _connector(p0, u0, p1, u1) -> tuple:
    dot = float(u0 @ u1)
    cross = float(u0[0] * u1[1] - u0[1] * u1[0])
    if dot > 0.99:
        n = max(2, int(math.ceil(np.linalg.norm(p1 - p0) / 0.5)) + 1)
        return np.linspace(p0, p1, n), "straight"
    if dot < -0.99:
        pts = _bezier(p0, p0 + UTURN_REACH * u0, p1 - UTURN_REACH * u1, p1)
        return pts, "uturn"
    d = 0.39 * float(np.linalg.norm(p1 - p0))
    return _bezier(p0, p0 + d * u0, p1 - d * u1, p1), "left" if cross > 0 else "right"


def _connect(nodes, roads_lanes, speed_limit, uturn_degree):
    lanes = dict(roads_lanes)
    succ = {k: [] for k in lanes}
    road_ids = list(lanes)
    for nid in nodes:
        incoming = [lanes[k] for k in road_ids if lanes[k].dst == nid]
        outgoing = [lanes[k] for k in road_ids if lanes[k].src == nid]
        degree = len({ln.dst for ln in outgoing})
        for li in incoming:
            for lo in outgoing:
                if lo.dst == li.src and degree > uturn_degree:
                    continue
                p0, p1 = li.points[-1], lo.points[0]
                u0 = li.points[-1] - li.points[-2]
                u1 = lo.points[1] - lo.points[0]
                u0, u1 = u0 / np.linalg.norm(u0), u1 / np.linalg.norm(u1)
                # straight through keeps the lane; turns may end in any lane,
                # which keeps multi-lane towns strongly connected
                if lo.index != li.index and float(u0 @ u1) > 0.9:
                    continue
                pts, turn = _connector(p0, u0, p1, u1)
                kappa = max_curvature(pts)
                limit = speed_limit if kappa < 1e-6 else min(
                    speed_limit, math.sqrt(LATERAL_ACCEL_LIMIT / kappa))
                cid = f"{li.lane_id}~{lo.lane_id}"
                lanes[cid] = Lane(cid, pts, LANE_WIDTH, limit, nid, nid, "connector", "",
                                  turn, li.index)
                succ[li.lane_id].append(cid)
                succ[cid] = [lo.lane_id]
    return lanes, succ


def build_grid_town(rows: int = 3, cols: int = 3, block: float = 100.0,
                    lanes_per_dir: int = 1, speed_limit: float = 14.0,
                    cycle: LightCycle | None = None, light_offset: float = 7.0,
                    median: float = 0.0) -> MapGraph:
    """Manhattan grid of two-way roads with a signalized crossroad at every node.

    Traffic keeps right; ``median`` is the width of the strip separating the
    two directions of a road. A 1x1 town gets four stub roads ending in U-turn loops
    so that every approach is reachable.
    """
    if rows < 1 or cols < 1 or lanes_per_dir < 1 or not block > 0.0 or not speed_limit > 0.0:
        raise ValidationError("grid town needs rows, cols, lanes >= 1 and positive block/limit")
    if not median >= 0.0:
        raise ValidationError("median width must be non-negative")
    cycle = cycle or LightCycle()
    half = lanes_per_dir * LANE_WIDTH + 0.5 * median + 5.0
    nodes = {}
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            nid = f"n{r}_{c}"
            nodes[nid] = Intersection(nid, c * block, r * block, half, True,
                                      (k * light_offset) % cycle.period)
    roads = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                roads.append((f"n{r}_{c}", f"n{r}_{c + 1}"))
            if r + 1 < rows:
                roads.append((f"n{r}_{c}", f"n{r + 1}_{c}"))
    if rows == 1 and cols == 1:
        stub = 0.5 * block
        for name, (dx, dy) in (("E", (1, 0)), ("N", (0, 1)), ("W", (-1, 0)), ("S", (0, -1))):
            nid = f"end{name}"
            nodes[nid] = Intersection(nid, dx * stub, dy * stub, UTURN_REACH + 2.0, False, 0.0)
            roads.append(("n0_0", nid))

    lanes = {}
    for a, b in roads:
        for src, dst in ((a, b), (b, a)):
            na, nb = nodes[src], nodes[dst]
            pa, pb = np.array([na.x, na.y]), np.array([nb.x, nb.y])
            u = (pb - pa) / np.linalg.norm(pb - pa)
            right = np.array([u[1], -u[0]])
            axis = "EW" if abs(u[0]) > abs(u[1]) else "NS"
            for k in range(lanes_per_dir):
                off = 0.5 * median + (k + 0.5) * LANE_WIDTH
                p0 = pa + u * na.half_size + right * off
                p1 = pb - u * nb.half_size + right * off
                n = max(2, int(math.ceil(np.linalg.norm(p1 - p0) / 2.0)) + 1)
                lid = f"{src}>{dst}#{k}"
                lanes[lid] = Lane(lid, np.linspace(p0, p1, n), LANE_WIDTH, speed_limit,
                                  src, dst, "road", axis, "", k)

    # U-turns only at dead ends, unless a single block needs them at its corners
    for uturn_degree in (1, 2):
        all_lanes, succ = _connect(nodes, lanes, speed_limit, uturn_degree)
        m = MapGraph(nodes, all_lanes, {k: tuple(v) for k, v in succ.items()}, cycle)
        if m.is_strongly_connected():
            return m
    raise ValidationError("constructed lane graph is not strongly connected")


# ----------------------------------------------------------------------------
# Drivable area


@dataclass(frozen=True, eq=False)
class DrivableMask:
    ox: float
    oy: float
    cell: float
    mask: np.ndarray  # (rows, cols) uint8, row 0 at oy

    @classmethod
    def build(cls, m: MapGraph, cell: float = 0.5, margin: float = 20.0) -> "DrivableMask":
        x0, y0, x1, y1 = m.bounds
        ox, oy = x0 - margin, y0 - margin
        w = int(math.ceil((x1 - x0 + 2 * margin) / cell))
        h = int(math.ceil((y1 - y0 + 2 * margin) / cell))
        mask = np.zeros((h, w), dtype=np.uint8)
        for ln in m.lanes.values():
            half = 0.5 * ln.width
            for a, b in zip(ln.points[:-1], ln.points[1:]):
                c0 = max(0, int((min(a[0], b[0]) - half - ox) / cell) - 1)
                c1 = min(w, int((max(a[0], b[0]) + half - ox) / cell) + 2)
                r0 = max(0, int((min(a[1], b[1]) - half - oy) / cell) - 1)
                r1 = min(h, int((max(a[1], b[1]) + half - oy) / cell) + 2)
                xs = ox + (np.arange(c0, c1) + 0.5) * cell
                ys = oy + (np.arange(r0, r1) + 0.5) * cell
                px, py = np.meshgrid(xs, ys)
                d = b - a
                t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / max(d @ d, 1e-12), 0, 1)
                dist = np.hypot(px - a[0] - t * d[0], py - a[1] - t * d[1])
                mask[r0:r1, c0:c1] |= (dist <= half).astype(np.uint8)
        for n in m.intersections.values():
            if n.signalized:
                c0 = int((n.x - n.half_size - ox) / cell)
                c1 = int(math.ceil((n.x + n.half_size - ox) / cell))
                r0 = int((n.y - n.half_size - oy) / cell)
                r1 = int(math.ceil((n.y + n.half_size - oy) / cell))
                mask[max(r0, 0):r1, max(c0, 0):c1] = 1
        return cls(ox, oy, cell, mask)

    def lookup(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        c = np.floor((pts[..., 0] - self.ox) / self.cell).astype(int)
        r = np.floor((pts[..., 1] - self.oy) / self.cell).astype(int)
        h, w = self.mask.shape
        ok = (c >= 0) & (c < w) & (r >= 0) & (r < h)
        out = np.zeros(pts.shape[:-1], dtype=np.uint8)
        out[ok] = self.mask[r[ok], c[ok]]
        return out


# ----------------------------------------------------------------------------
# Routes


@dataclass(frozen=True, eq=False)
class RoutePath:
    """Concatenated centerline of a lane sequence, with arc length ``s``.

    ``stops`` lists (s, node_id, axis) for every signalized stop line on the
    path; ``goal_s`` is the destination's arc length.
    """

    lanes: tuple
    points: np.ndarray
    s: np.ndarray
    limits: np.ndarray  # speed limit per segment
    stops: tuple
    goal_s: float
    lane_starts: tuple = ()

    @cached_property
    def cols(self):
        """Plain-list copies (s, x, y, segment heading, segment limit) for scalar lookups."""
        d = np.diff(self.points, axis=0)
        return (self.s.tolist(), self.points[:, 0].tolist(), self.points[:, 1].tolist(),
                np.arctan2(d[:, 1], d[:, 0]).tolist(), self.limits.tolist())

    @cached_property
    def seg_headings(self) -> np.ndarray:
        d = np.diff(self.points, axis=0)
        return np.arctan2(d[:, 1], d[:, 0])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @property
    def goal(self) -> np.ndarray:
        return self.point_at(self.goal_s)

    def segment(self, s: float) -> int:
        sl = self.cols[0]
        i = bisect.bisect_right(sl, s) - 1
        return min(max(i, 0), len(sl) - 2)

    def point_at(self, s: float) -> np.ndarray:
        return np.array(self.xy_at(s))

    def xy_at(self, s: float) -> tuple:
        sl, xs, ys = self.cols[:3]
        s = min(max(s, 0.0), sl[-1])
        i = self.segment(s)
        span = sl[i + 1] - sl[i]
        u = (s - sl[i]) / span if span > 0.0 else 0.0
        return xs[i] + u * (xs[i + 1] - xs[i]), ys[i] + u * (ys[i + 1] - ys[i])

    def heading_at(self, s: float) -> float:
        return self.cols[3][self.segment(s)]

    def limit_at(self, s: float) -> float:
        return self.cols[4][self.segment(s)]

    def lane_at(self, s: float) -> str:
        i = bisect.bisect_right(self.lane_starts, s) - 1
        return self.lanes[max(i, 0)]

    def project(self, x: float, y: float, s_hint: float | None = None,
                window: tuple = (-10.0, 40.0)) -> tuple[float, float]:
        """Arc length and signed lateral offset (left positive) of a point."""
        if s_hint is None:
            i0, i1 = 0, len(self.s) - 1
        else:
            i0 = max(0, int(np.searchsorted(self.s, s_hint + window[0])) - 1)
            i1 = min(len(self.s) - 1, int(np.searchsorted(self.s, s_hint + window[1])) + 1)
            if i1 <= i0:
                i0, i1 = max(0, i1 - 1), min(len(self.s) - 1, i1 + 1)
        a = self.points[i0:i1]
        d = self.points[i0 + 1:i1 + 1] - a
        l2 = np.maximum((d * d).sum(axis=1), 1e-12)
        t = np.clip(((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / l2, 0.0, 1.0)
        px, py = a[:, 0] + t * d[:, 0], a[:, 1] + t * d[:, 1]
        dist2 = (x - px) ** 2 + (y - py) ** 2
        k = int(np.argmin(dist2))
        s = float(self.s[i0 + k] + t[k] * math.sqrt(l2[k]))
        lat = float(d[k, 0] * (y - a[k, 1]) - d[k, 1] * (x - a[k, 0])) / math.sqrt(l2[k])
        return s, lat


    def project_many(self, pts: np.ndarray, s_lo: float, s_hi: float) -> tuple:
        """Vectorized :meth:`project` restricted to the arc-length window [s_lo, s_hi].

        Returns arc lengths, lateral offsets and segment indices.
        """
        i0 = max(0, int(np.searchsorted(self.s, s_lo)) - 1)
        i1 = min(len(self.s) - 1, int(np.searchsorted(self.s, s_hi)) + 1)
        i1 = max(i1, i0 + 1)
        a = self.points[i0:i1]
        d = self.points[i0 + 1:i1 + 1] - a
        l2 = np.maximum((d * d).sum(axis=1), 1e-12)
        px = pts[:, 0:1] - a[:, 0]
        py = pts[:, 1:2] - a[:, 1]
        t = np.clip((px * d[:, 0] + py * d[:, 1]) / l2, 0.0, 1.0)
        ex, ey = px - t * d[:, 0], py - t * d[:, 1]
        k = np.argmin(ex * ex + ey * ey, axis=1)
        rows = np.arange(len(pts))
        tk = t[rows, k]
        ln = np.sqrt(l2[k])
        s = self.s[i0 + k] + tk * ln
        lat = (d[k, 0] * py[rows, k] - d[k, 1] * px[rows, k]) / ln
        return s, lat, i0 + k


def build_route_path(m: MapGraph, lane_ids, goal_s: float) -> RoutePath:
    pts, limits, stops, starts = [], [], [], []
    offset = 0.0
    for j, lid in enumerate(lane_ids):
        ln = m.lanes[lid]
        if pts and np.linalg.norm(ln.points[0] - pts[-1][-1]) < 1e-6:
            p = ln.points[1:]
        else:
            p = ln.points
        starts.append(offset)
        pts.append(p)
        limits.extend([ln.speed_limit] * (len(p) - 1 if j == 0 else len(p)))
        offset += ln.length
        if ln.kind == "road" and j + 1 < len(lane_ids):
            node = m.intersections[ln.dst]
            if node.signalized:
                stops.append((offset, ln.dst, ln.axis))
    points = np.concatenate(pts)
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    limits = np.asarray(limits, dtype=float)
    return RoutePath(tuple(lane_ids), points, s, limits, tuple(stops), float(goal_s),
                     tuple(starts))


def lane_distances(m: MapGraph, lane_id: str) -> dict:
    """Network length from the start of ``lane_id`` to the start of every lane."""
    return nx.single_source_dijkstra_path_length(m.graph, lane_id, weight="weight")


def plan_route(m: MapGraph, lane_id: str, dest_lane: str, dest_s: float) -> RoutePath:
    try:
        lanes = nx.dijkstra_path(m.graph, lane_id, dest_lane, weight="weight")
    except (nx.NetworkXNoPath, nx.NodeNotFound) as exc:
        raise RoutingError(f"no route from {lane_id} to {dest_lane}") from exc
    if len(lanes) == 1:
        raise RoutingError("destination must lie on a different lane")
    goal = sum(m.lanes[k].length for k in lanes[:-1]) + dest_s
    return build_route_path(m, lanes, goal)


def assign_random_destination(m: MapGraph, lane_id: str, s: float, rng: np.random.Generator,
                              min_distance: float = 100.0, margin: float = 2.0) -> RoutePath:
    """Uniform random road-lane point at least ``min_distance`` of network length ahead."""
    dist = lane_distances(m, lane_id)
    intervals = []
    for k in m.road_lanes:
        if k == lane_id or k not in dist:
            continue
        length = m.lanes[k].length
        lo = max(margin, min_distance - (dist[k] - s))
        hi = length - margin
        if hi > lo:
            intervals.append((k, lo, hi))
    if not intervals:
        raise RoutingError(f"no lane point {min_distance} m away from {lane_id}")
    widths = np.array([hi - lo for _, lo, hi in intervals])
    u = float(rng.uniform(0.0, widths.sum()))
    j = min(int(np.searchsorted(np.cumsum(widths), u, side="right")), len(intervals) - 1)
    k, lo, hi = intervals[j]
    dest_s = min(lo + (u - (widths[:j].sum())), hi)
    return plan_route(m, lane_id, k, dest_s)


@dataclass(frozen=True)
class RouteProgress:
    """Per-actor route record carried in the world snapshot.

    ``signal_draws`` holds one uniform draw per stop line on the path; an NPC
    runs the light at stop ``k`` iff ``signal_draws[k] < p_ignore_signal``.
    """

    path: RoutePath
    s: float = 0.0
    signal_draws: tuple = ()
    epoch: int = 0

    def advanced(self, s: float) -> "RouteProgress":
        return RouteProgress(self.path, s, self.signal_draws, self.epoch)

    def next_stop(self, s_front: float, behind: float = 2.0):
        """(index, s_stop, node_id, axis) of the first stop line not yet passed."""
        for k, (s_stop, node, axis) in enumerate(self.path.stops):
            if s_stop > s_front - behind:
                return k, s_stop, node, axis
        return None
