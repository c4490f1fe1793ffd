"""Traffic episode engine: spawning, NPC behavior, collisions and metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import SpawnError, ValidationError
from .field import FieldConfig
from .policies import (POLICY_NAMES, PolicyDecision, PolicyGains, RssParams, autopilot_step,
                       corridor, cruise_target, ego_route, no_policy_step, pair_potentials,
                       pure_pursuit, rss_baseline_step, sff_policy_step, stop_line)
from .procedure import ProcedureConfig, default_procedure
from .roadmap import (LightCycle, MapGraph, RouteProgress, assign_random_destination,
                      build_grid_town, plan_route)
from .world import (A_MAX_ABS, ActorState, ControlInput, VehicleShape, WorldState,
                    footprint_polygon, polygons_overlap, step_kinematics)

EGO_ID = "ego"
# benchmarked policies plus two scripted egos (parked, and driving like an NPC)
EGO_POLICIES = POLICY_NAMES + ("stationary", "npc")

SHAPE_CATALOG = (
    VehicleShape(4.5, 1.9, 2.7, "sedan"),
    VehicleShape(4.8, 2.0, 2.9, "suv"),
    VehicleShape(5.2, 2.1, 3.2, "van"),
    VehicleShape(7.0, 2.4, 4.0, "truck"),
)

_STREAMS = {"spawn": 1, "route": 2, "behavior": 3, "signal": 4, "respawn": 5}


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named purpose (and optional actor index / epoch)."""
    return np.random.default_rng([int(seed), _STREAMS[name], *map(int, keys)])


@dataclass(frozen=True)
class AggressionLevel:
    name: str
    p_ignore_surroundings: float
    p_ignore_signal: float

    def __post_init__(self):
        for p in (self.p_ignore_surroundings, self.p_ignore_signal):
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"probability {p} outside [0, 1]")
        if self.name.lower() == "no" and (self.p_ignore_surroundings or self.p_ignore_signal):
            raise ValidationError("the No aggression level must have zero probabilities")


AGGRESSION_LEVELS = {
    "no": AggressionLevel("No", 0.0, 0.0),
    "low": AggressionLevel("Low", 0.10, 0.05),
    "intermediate": AggressionLevel("Intermediate", 0.25, 0.15),
    "high": AggressionLevel("High", 0.50, 0.30),
}


def aggression(name) -> AggressionLevel:
    if isinstance(name, AggressionLevel):
        return name
    try:
        return AGGRESSION_LEVELS[str(name).lower()]
    except KeyError:
        raise ValidationError(f"unknown aggression level {name!r}") from None


def aggression_table(d: dict | None = None) -> dict:
    """Default levels, overridden by a config's ``aggression_table`` section."""
    table = dict(AGGRESSION_LEVELS)
    for name, (ps, pg) in (d or {}).get("aggression_table", {}).items():
        table[name.lower()] = AggressionLevel(name, float(ps), float(pg))
    return table


def level_from(table: dict, name) -> AggressionLevel:
    try:
        return table[str(name).lower()]
    except KeyError:
        raise ValidationError(f"unknown aggression level {name!r}") from None


@dataclass(frozen=True)
class NpcParams:
    a_max: float = 2.0
    b_comf: float = 3.0
    time_gap: float = 2.0
    standstill: float = 2.5
    lookahead: float = 50.0
    approach_range: float = 40.0
    conflict_distance: float = 2.6
    commit_decel: float = 6.0


@dataclass(frozen=True)
class ScenarioConfig:
    rows: int = 3
    cols: int = 3
    block: float = 100.0
    lanes_per_dir: int = 1
    median: float = 0.0
    speed_limit: float = 14.0
    light_cycle: LightCycle = field(default_factory=LightCycle)
    light_offset: float = 7.0
    npc_count: int = 50
    aggression: AggressionLevel = AGGRESSION_LEVELS["no"]
    episode_steps: int = 5000
    dt: float = 0.1
    seed: int = 0
    policy: str = "sff"
    shapes: tuple = SHAPE_CATALOG
    ego_shape: VehicleShape = SHAPE_CATALOG[0]
    p_lane_change: float = 0.002
    arrival_radius: float = 4.0
    min_destination_distance: float = 100.0
    spawn_gap: float = 4.0
    wreck_clear_time: float = 30.0
    procedure: ProcedureConfig = field(default_factory=ProcedureConfig)
    cell: float = 0.5
    kernel_radius: float = 1.5
    supersample: int = 4
    gains: PolicyGains = field(default_factory=PolicyGains)
    rss: RssParams = field(default_factory=RssParams)
    npc: NpcParams = field(default_factory=NpcParams)
    model_path: str | None = None

    def __post_init__(self):
        if self.npc_count < 0:
            raise ValidationError("npc_count must be >= 0")
        if self.episode_steps <= 0:
            raise ValidationError("episode_steps must be > 0")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValidationError("dt must be positive")
        if self.policy not in EGO_POLICIES:
            raise ValidationError(f"unknown policy {self.policy!r}; choose from {EGO_POLICIES}")
        if not self.shapes:
            raise ValidationError("shape catalog is empty")

    def field_config(self) -> FieldConfig:
        proc = default_procedure(self.procedure)
        return FieldConfig(proc, self.cell, self.kernel_radius, False, 0.25, self.supersample)

    def build_map(self) -> MapGraph:
        return _cached_map(self.rows, self.cols, self.block, self.lanes_per_dir,
                           self.speed_limit, self.light_cycle, self.light_offset, self.median)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        """Build from the sectioned JSON config (map, procedure, grid, policy, ...)."""
        kw = {}
        mp = d.get("map", {})
        for k in ("rows", "cols", "lanes_per_dir"):
            if k in mp:
                kw[k] = int(mp[k])
        for k in ("block", "speed_limit", "light_offset", "median"):
            if k in mp:
                kw[k] = float(mp[k])
        if "light_cycle" in mp:
            kw["light_cycle"] = LightCycle(**mp["light_cycle"])
        sc = d.get("scenario", {})
        for k in ("npc_count", "episode_steps", "seed"):
            if k in sc:
                kw[k] = int(sc[k])
        for k in ("dt", "p_lane_change", "arrival_radius", "min_destination_distance",
                  "spawn_gap", "wreck_clear_time"):
            if k in sc:
                kw[k] = float(sc[k])
        if "policy" in sc:
            kw["policy"] = sc["policy"]
        if "shapes" in sc:
            kw["shapes"] = tuple(VehicleShape(**s) for s in sc["shapes"])
        if "aggression" in sc:
            kw["aggression"] = level_from(aggression_table(d), sc["aggression"])
        if "procedure" in d:
            kw["procedure"] = ProcedureConfig.from_dict(d["procedure"])
        gr = d.get("grid", {})
        for k in ("cell", "kernel_radius"):
            if k in gr:
                kw[k] = float(gr[k])
        if "supersample" in gr:
            kw["supersample"] = int(gr["supersample"])
        pol = d.get("policy", {})
        if "gains" in pol:
            kw["gains"] = PolicyGains.from_dict(pol["gains"])
        if "rss" in pol:
            kw["rss"] = RssParams.from_dict(pol["rss"])
        if "model_path" in pol:
            kw["model_path"] = pol["model_path"]
        if "npc" in d:
            kw["npc"] = NpcParams(**{k: float(v) for k, v in d["npc"].items()})
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "map": {"rows": self.rows, "cols": self.cols, "block": self.block,
                    "lanes_per_dir": self.lanes_per_dir, "speed_limit": self.speed_limit,
                    "median": self.median,
                    "light_offset": self.light_offset, "light_cycle": self.light_cycle.to_dict()},
            "scenario": {"npc_count": self.npc_count, "episode_steps": self.episode_steps,
                         "seed": self.seed, "dt": self.dt, "policy": self.policy,
                         "aggression": self.aggression.name,
                         "p_lane_change": self.p_lane_change,
                         "arrival_radius": self.arrival_radius,
                         "min_destination_distance": self.min_destination_distance,
                         "spawn_gap": self.spawn_gap, "wreck_clear_time": self.wreck_clear_time,
                         "shapes": [{"length": s.length, "width": s.width,
                                     "wheelbase": s.wheelbase, "kind": s.kind}
                                    for s in self.shapes]},
            "aggression_table": {lv.name: [lv.p_ignore_surroundings, lv.p_ignore_signal]
                                 for lv in AGGRESSION_LEVELS.values()},
            "procedure": self.procedure.to_dict(),
            "grid": {"cell": self.cell, "kernel_radius": self.kernel_radius,
                     "supersample": self.supersample},
            "policy": {"gains": asdict(self.gains), "rss": asdict(self.rss),
                       **({"model_path": self.model_path} if self.model_path else {})},
            "npc": asdict(self.npc),
        }


@lru_cache(maxsize=8)
def _cached_map(rows, cols, block, lanes, limit, cycle, offset, median) -> MapGraph:
    return build_grid_town(rows, cols, block, lanes, limit, cycle, offset, median)


@dataclass
class EpisodeResult:
    arrivals: int
    accident_free_steps: int
    terminated_by_collision: bool
    decision_log_path: str | None = None
    episode_steps: int = 0
    red_light_runs: int = 0
    npc_collisions: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# ----------------------------------------------------------------------------
# Routes and spawning


def _route_record(m: MapGraph, lane_id: str, s_lane: float, seed: int, index: int,
                  epoch: int, min_dist: float) -> RouteProgress:
    path = assign_random_destination(m, lane_id, s_lane, substream(seed, "route", index, epoch),
                                     min_dist)
    draws = substream(seed, "signal", index, epoch).random(len(path.stops))
    return RouteProgress(path, s_lane, tuple(float(u) for u in draws), epoch)


def _free_spot(m: MapGraph, shape: VehicleShape, placed: list, rng, gap: float,
               tries: int = 400):
    lanes = m.road_lanes
    lengths = np.array([m.lanes[k].length for k in lanes])
    probs = lengths / lengths.sum()
    for _ in range(tries):
        k = lanes[int(rng.choice(len(lanes), p=probs))]
        ln = m.lanes[k]
        lo, hi = 0.5 * shape.length + 1.0, ln.length - 0.5 * shape.length - 1.0
        if hi <= lo:
            continue
        s = float(rng.uniform(lo, hi))
        x, y = ln.point_at(s)
        st = ActorState(float(x), float(y), ln.heading_at(s), 0.0)
        probe = footprint_polygon(st, VehicleShape(shape.length + 2 * gap, shape.width,
                                                   shape.wheelbase))
        ok = True
        for other, oshape in placed:
            if math.hypot(other.x - st.x, other.y - st.y) > (
                    shape.half_diagonal + oshape.half_diagonal + 2 * gap):
                continue
            if polygons_overlap(probe, footprint_polygon(other, oshape)):
                ok = False
                break
        if ok:
            return k, s, st
    return None


def spawn_traffic(config: ScenarioConfig, rng: np.random.Generator | None = None) -> WorldState:
    """Ego plus ``npc_count`` NPCs at rest on non-overlapping lane positions."""
    m = config.build_map()
    rng = rng if rng is not None else substream(config.seed, "spawn")
    shapes = [config.ego_shape] + [config.shapes[int(rng.integers(len(config.shapes)))]
                                   for _ in range(config.npc_count)]
    need = sum(s.length + 2 * config.spawn_gap for s in shapes)
    have = sum(m.lanes[k].length for k in m.road_lanes)
    if need > 0.5 * have:
        raise SpawnError(f"spawning {len(shapes)} vehicles needs {need:.0f} m of lane "
                         f"(at most half of the {have:.0f} m available)", required_length=need)
    placed, routes = [], {}
    for i, shape in enumerate(shapes):
        aid = EGO_ID if i == 0 else f"npc{i - 1}"
        spot = _free_spot(m, shape, placed, rng, config.spawn_gap)
        if spot is None:
            raise SpawnError(f"no free spot for {aid}; needs {need:.0f} m of lane",
                             required_length=need)
        k, s, st = spot
        placed.append((replace(st, actor_id=aid), shape))
        routes[aid] = _route_record(m, k, s, config.seed, i, 0, config.min_destination_distance)
    return WorldState(0.0, tuple(placed), m.lights(0.0), m, routes)


# ----------------------------------------------------------------------------
# NPC behavior


def _idm(v: float, v0: float, gap: float, v_lead: float, p: NpcParams) -> float:
    v0 = max(v0, 0.1)
    free = 1.0 - (v / v0) ** 4
    if gap is None:
        return p.a_max * free
    if gap <= 0.05:
        return -A_MAX_ABS
    s_star = p.standstill + max(0.0, v * p.time_gap + v * (v - v_lead) /
                                (2.0 * math.sqrt(p.a_max * p.b_comf)))
    return p.a_max * (free - (s_star / gap) ** 2)


def _approach(world: WorldState, aid, p: NpcParams):
    """Intersection the actor is in or about to enter.

    Returns (node, connector_id, distance_to_entry, inside) or None.
    """
    route = world.routes.get(aid)
    if route is None:
        return None
    path = route.path
    m = world.map
    state, shape = world.actor(aid)
    front = route.s + 0.5 * shape.length
    k = int(np.searchsorted(path.lane_starts, route.s, side="right")) - 1
    k = max(k, 0)
    lane = m.lanes[path.lanes[k]]
    if lane.kind == "connector":
        return lane.src, lane.lane_id, 0.0, True
    if k + 1 >= len(path.lanes):
        return None
    nxt = m.lanes[path.lanes[k + 1]]
    d = path.lane_starts[k + 1] - front
    if nxt.kind == "connector" and d < p.approach_range:
        return nxt.src, nxt.lane_id, d, d <= 0.0
    return None


def _intersection_table(world: WorldState, p: NpcParams) -> dict:
    """node -> list of (actor_id, connector, distance, inside, eta, competing)."""
    table: dict = {}
    for st, _ in world.actors:
        aid = st.actor_id
        if aid in world.frozen_ids:
            continue
        ap = _approach(world, aid, p)
        if ap is None:
            continue
        node, conn, d, inside = ap
        eta = 0.0 if inside else d / max(st.speed, 1.0)
        competing = inside or st.speed * st.speed >= 2.0 * p.commit_decel * max(d, 0.0)
        if not competing:
            info = stop_line(world, aid)
            competing = info is None or info[2] == "Green" or info[1] > p.approach_range
        table.setdefault(node, []).append((aid, conn, d, inside, eta, competing))
    return table


@lru_cache(maxsize=8192)
def _connectors_conflict(m: MapGraph, a: str, b: str, dist: float) -> bool:
    pa, pb = m.lanes[a].points, m.lanes[b].points
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    return bool(d2.min() < dist * dist)


def runs_signal(route: RouteProgress, stop_index: int, p_ignore_signal: float) -> bool:
    """Latched red-light decision for one approach (shared uniform draw)."""
    if stop_index >= len(route.signal_draws):
        return False
    return route.signal_draws[stop_index] < p_ignore_signal


def npc_step(world: WorldState, actor_id, level: AggressionLevel,
             params: NpcParams = NpcParams(), gains: PolicyGains = PolicyGains()) -> ControlInput:
    """Leader following, signal compliance (unless latched to run) and yielding."""
    state, shape = world.actor(actor_id)
    route = ego_route(world, actor_id)
    v = state.speed
    v0 = cruise_target(world, actor_id, gains)
    a = _idm(v, v0, None, 0.0, params)
    for r in corridor(world, actor_id, params.lookahead, margin=0.0):
        if abs(r["rel_heading"]) < math.pi / 3 or r["gap"] < 6.0:
            a = min(a, _idm(v, v0, r["gap"], max(r["v_along"], 0.0), params))
            break
    running = False
    info = stop_line(world, actor_id)
    if info is not None:
        k, d, phase = info
        running = runs_signal(route, k, level.p_ignore_signal)
        if phase != "Green" and not running and d > -0.5:
            stoppable = d - 1.0 >= v * v / (2.0 * params.commit_decel)
            if phase == "Red" or stoppable:
                a = min(a, _idm(v, v0, max(d - 1.0, 0.01), 0.0, params))
    if not running:
        a = min(a, _yield_accel(world, actor_id, v, v0, params))
    a = min(max(a, -A_MAX_ABS), A_MAX_ABS)
    return ControlInput(a, pure_pursuit(world, actor_id, gains))


def _yield_accel(world, aid, v, v0, p: NpcParams) -> float:
    table = world.memo(("intersections", p), lambda w: _intersection_table(w, p))
    mine = None
    for node, rows in table.items():
        for row in rows:
            if row[0] == aid:
                mine = (node, row)
                break
        if mine:
            break
    if mine is None:
        return math.inf
    node, (_, conn, d, inside, eta, _) = mine
    if inside or v * v > 2.0 * p.commit_decel * max(d, 0.0) + 1e-9:
        return math.inf
    for other, oconn, od, oinside, oeta, competing in table[node]:
        if other == aid or not competing:
            continue
        if (oeta, str(other)) >= (eta, str(aid)):
            continue
        if _connectors_conflict(world.map, conn, oconn, p.conflict_distance):
            return _idm(v, v0, max(d - 1.0, 0.01), 0.0, p)
    return math.inf


def maybe_change_lane(world: WorldState, actor_id, level: AggressionLevel,
                      rng: np.random.Generator, p_lane_change: float = 0.002,
                      min_gap: float = 12.0):
    """Per-step lane-change decision; returns a new route record or None.

    Two uniforms are drawn every step so the stream stays aligned whatever
    the map looks like.
    """
    u_change, u_ignore = rng.random(2)
    if u_change >= p_lane_change:
        return None
    route = world.routes[actor_id]
    m = world.map
    lane_id = route.path.lane_at(route.s)
    options = m.neighbors.get(lane_id, ())
    if not options:
        return None
    target = options[0]
    tl = m.lanes[target]
    state, _ = world.actor(actor_id)
    ignore = u_ignore < level.p_ignore_surroundings
    arr = world.arrays
    s_t = float(np.clip(route.s - route.path.lane_starts[route.path.lanes.index(lane_id)],
                        0.0, tl.length))
    if not ignore:
        for j, (st, _) in enumerate(world.actors):
            if st.actor_id == actor_id:
                continue
            if math.hypot(arr["x"][j] - state.x, arr["y"][j] - state.y) < min_gap:
                return None
    dest_lane = route.path.lanes[-1]
    dest_s = route.path.goal_s - route.path.lane_starts[-1]
    try:
        path = plan_route(m, target, dest_lane, dest_s)
    except Exception:
        return None
    s_new, _ = path.project(state.x, state.y, s_t)
    return RouteProgress(path, s_new, route.signal_draws, route.epoch)


# ----------------------------------------------------------------------------
# Episode loop


def resolve_policy(name: str, config: ScenarioConfig, model=None):
    cfg = config.field_config()
    if name == "none":
        return lambda w: no_policy_step(w, EGO_ID, config.gains)
    if name == "autopilot":
        return lambda w: autopilot_step(w, EGO_ID, config.gains)
    if name == "rss":
        return lambda w: rss_baseline_step(w, EGO_ID, config.rss, config.gains)
    if name == "sff":
        return lambda w: sff_policy_step(w, EGO_ID, "oracle", config.gains, cfg)
    if name == "sff-model":
        if model is None:
            from .predictor import load_model

            if not config.model_path:
                raise ValidationError("policy sff-model needs policy.model_path in the config")
            model = load_model(config.model_path)
        return lambda w: sff_policy_step(w, EGO_ID, "model", config.gains, cfg, model)
    if name == "stationary":
        return lambda w: _stationary(w)
    if name == "npc":
        # the ego drives like any other NPC; used to generate predictor data
        return lambda w: PolicyDecision(npc_step(w, EGO_ID, config.aggression, config.npc,
                                                 config.gains), {"total_rho": 0.0})
    raise ValidationError(f"unknown policy {name!r}")


def _stationary(world):
    return PolicyDecision(ControlInput(-A_MAX_ABS, 0.0), {"total_rho": 0.0})


def _footprints_collide(a, sa, b, sb) -> bool:
    if math.hypot(a.x - b.x, a.y - b.y) > sa.half_diagonal + sb.half_diagonal:
        return False
    return polygons_overlap(footprint_polygon(a, sa), footprint_polygon(b, sb))


def _fmt(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, dict):
        return {str(k): _fmt(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_fmt(v) for v in x]
    return x


class Episode:
    """Stepwise episode runner. ``run_episode`` drives it to completion."""

    def __init__(self, config: ScenarioConfig, policy=None, log_path=None, model=None,
                 world: WorldState | None = None):
        self.config = config
        self.map = config.build_map()
        self.world = world if world is not None else spawn_traffic(config)
        name = policy if isinstance(policy, str) or policy is None else None
        self.policy_name = name or config.policy
        self.policy = policy if callable(policy) else resolve_policy(self.policy_name, config,
                                                                     model)
        self.behavior = {st.actor_id: substream(config.seed, "behavior", i)
                         for i, (st, _) in enumerate(self.world.actors)}
        self.index = {st.actor_id: i for i, (st, _) in enumerate(self.world.actors)}
        self.epochs = {st.actor_id: 0 for st, _ in self.world.actors}
        self.frozen_since: dict = {}
        self.arrivals = 0
        self.step_index = 0
        self.red_light_runs = 0
        self.npc_collisions = 0
        self.collided = False
        self.log_path = log_path
        self._log = open(log_path, "w") if log_path else None
        self._field_cfg = config.field_config()
        self._runs_seen: set = set()

    def close(self):
        if self._log:
            self._log.close()
            self._log = None

    def _new_route(self, aid, path, s):
        lane_id = path.lane_at(s)
        s_lane = s - path.lane_starts[path.lanes.index(lane_id)]
        self.epochs[aid] += 1
        return _route_record(self.map, lane_id, max(s_lane, 0.0), self.config.seed,
                             self.index[aid], self.epochs[aid],
                             self.config.min_destination_distance)

    def step(self) -> bool:
        """Advance one timestep. Returns False once the episode is over."""
        cfg = self.config
        if self.collided or self.step_index >= cfg.episode_steps:
            return False
        w = self.world
        decision = self.policy(w)
        routes = dict(w.routes)
        for st, _ in w.actors:
            aid = st.actor_id
            if aid == EGO_ID or aid in w.frozen_ids:
                continue
            new = maybe_change_lane(w, aid, cfg.aggression, self.behavior[aid],
                                    cfg.p_lane_change)
            if new is not None:
                routes[aid] = new
        if routes != w.routes:
            w = WorldState(w.time, w.actors, w.lights, w.map, routes, w.frozen_ids)
        controls = {EGO_ID: decision.control}
        for st, _ in w.actors:
            aid = st.actor_id
            if aid != EGO_ID and aid not in w.frozen_ids:
                controls[aid] = npc_step(w, aid, cfg.aggression, cfg.npc, cfg.gains)
                self._count_run(w, aid)
        actors = []
        for st, shape in w.actors:
            if st.actor_id in w.frozen_ids:
                actors.append((st, shape))
            else:
                actors.append((step_kinematics(st, controls[st.actor_id], shape, cfg.dt), shape))
        t = w.time + cfg.dt
        new_routes = {}
        for st, shape in actors:
            r = routes[st.actor_id]
            s, _ = r.path.project(st.x, st.y, r.s)
            new_routes[st.actor_id] = r.advanced(s)
        frozen = set(w.frozen_ids)
        world = WorldState(t, tuple(actors), self.map.lights(t), self.map, new_routes,
                           frozenset(frozen))
        # collisions
        ego, eshape = world.actor(EGO_ID)
        hit = any(_footprints_collide(ego, eshape, b, bs) for b, bs in actors
                  if b.actor_id != EGO_ID)
        self._write_log(w, decision)
        if hit:
            self.collided = True
            self.world = world
            return False
        self._npc_collisions(world, frozen, t)
        # arrivals and re-routing
        for st, shape in actors:
            aid = st.actor_id
            if aid in frozen:
                continue
            r = new_routes[aid]
            goal = r.path.goal
            if aid == EGO_ID:
                arrived = math.hypot(st.x - goal[0], st.y - goal[1]) <= cfg.arrival_radius
                if arrived:
                    self.arrivals += 1
            else:
                arrived = r.s >= r.path.goal_s - cfg.arrival_radius
            if arrived or r.s >= r.path.length - 0.5:
                new_routes[aid] = self._new_route(aid, r.path, r.s)
        self._clear_wrecks(actors, new_routes, frozen, t)
        self.world = WorldState(t, tuple(actors), world.lights, self.map, new_routes,
                                frozenset(frozen))
        self.step_index += 1
        return self.step_index < cfg.episode_steps

    def _count_run(self, w, aid):
        info = stop_line(w, aid)
        if info is None:
            return
        k, d, phase = info
        if phase == "Red" and -0.5 < d <= 0.5:
            key = (aid, self.epochs[aid], k)
            if key not in self._runs_seen:
                self._runs_seen.add(key)
                self.red_light_runs += 1

    def _npc_collisions(self, world, frozen, t):
        arr = world.arrays
        xs, ys = arr["x"], arr["y"]
        d2 = (xs[:, None] - xs[None, :]) ** 2 + (ys[:, None] - ys[None, :]) ** 2
        reach = 0.5 * np.hypot(arr["length"], arr["width"])
        close = np.argwhere(np.triu(d2 < (reach[:, None] + reach[None, :]) ** 2, 1))
        for i, j in close:
            (a, sa), (b, sb) = world.actors[i], world.actors[j]
            if EGO_ID in (a.actor_id, b.actor_id):
                continue
            if a.actor_id in frozen and b.actor_id in frozen:
                continue
            if polygons_overlap(footprint_polygon(a, sa), footprint_polygon(b, sb)):
                self.npc_collisions += 1
                for aid in (a.actor_id, b.actor_id):
                    if aid not in frozen:
                        frozen.add(aid)
                        self.frozen_since[aid] = t

    def _clear_wrecks(self, actors, routes, frozen, t):
        """Wrecked NPCs stand still, then reappear at a free spot after a timeout."""
        cfg = self.config
        for aid in sorted(frozen, key=str):
            if t - self.frozen_since[aid] < cfg.wreck_clear_time - 1e-9:
                continue
            i = next(k for k, (st, _) in enumerate(actors) if st.actor_id == aid)
            shape = actors[i][1]
            self.epochs[aid] += 1
            rng = substream(cfg.seed, "respawn", self.index[aid], self.epochs[aid])
            others = [a for k, a in enumerate(actors) if k != i]
            spot = _free_spot(self.map, shape, others, rng, cfg.spawn_gap)
            if spot is None:
                continue
            k, s, st = spot
            actors[i] = (replace(st, actor_id=aid), shape)
            routes[aid] = _route_record(self.map, k, s, cfg.seed, self.index[aid],
                                        self.epochs[aid], cfg.min_destination_distance)
            frozen.discard(aid)
            del self.frozen_since[aid]
        for st, _ in actors:
            if st.actor_id in frozen and st.speed != 0.0:
                i = next(k for k, (s2, _) in enumerate(actors) if s2.actor_id == st.actor_id)
                actors[i] = (replace(st, speed=0.0), actors[i][1])

    def _write_log(self, w: WorldState, decision):
        if not self._log:
            return
        rationale = dict(decision.rationale)
        pairs = rationale.pop("pairs", None)
        if pairs is None:
            pairs = pair_potentials(w, EGO_ID, self._field_cfg)
        ego, _ = w.actor(EGO_ID)
        rec = {"t": round(w.time, 10), "ego": ego.to_dict(),
               "control": {"accel": decision.control.accel, "steer": decision.control.steer},
               "rationale": _fmt(rationale), "rho": _fmt(pairs)}
        self._log.write(json.dumps(rec, sort_keys=True) + "\n")

    def result(self) -> EpisodeResult:
        steps = self.step_index if self.collided else self.config.episode_steps
        return EpisodeResult(self.arrivals, steps, self.collided, self.log_path,
                             self.config.episode_steps, self.red_light_runs, self.npc_collisions)


def run_episode(config: ScenarioConfig, policy=None, log_path=None, model=None,
                world: WorldState | None = None) -> EpisodeResult:
    """Run one episode to completion (collision or ``episode_steps``)."""
    ep = Episode(config, policy, log_path, model, world)
    try:
        while ep.step():
            pass
    finally:
        ep.close()
    return ep.result()
