"""Ego driving policies: the integrated SFF controller and three baselines.

Every policy is a pure function of the world snapshot. It reads the ego's
route record from ``world.routes`` and returns a :class:`PolicyDecision`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .claimed import actor_lattice_field
from .errors import RoutingError, ValidationError
from .field import FieldConfig, lattice_potential
from .world import A_MAX_ABS, STEER_MAX, ControlInput, WorldState

POLICY_NAMES = ("none", "autopilot", "rss", "sff", "sff-model")


@dataclass(frozen=True)
class PolicyGains:
    k_v: float = 0.5  # 1/s, cruise gain
    k_rho: float = 20.0  # accel per unit of total potential
    a_max_accel: float = 2.0
    a_max_brake: float = A_MAX_ABS
    stop_zone: float = 15.0  # red light: hold within this distance of the stop line
    stop_margin: float = 1.0
    lookahead_min: float = 5.0
    lookahead_time: float = 1.0
    profile_decel: float = 2.0  # anticipation of lower speed limits ahead
    time_gap: float = 2.0
    standstill_gap: float = 3.0
    k_gap: float = 0.25
    k_dv: float = 0.7

    def __post_init__(self):
        if min(self.k_v, self.a_max_accel, self.a_max_brake, self.profile_decel) <= 0.0:
            raise ValidationError("policy gains must be positive")
        if self.k_rho < 0.0:
            raise ValidationError("k_rho must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyGains":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class RssParams:
    ttc_long_threshold: float = 3.0
    ttc_lat_threshold: float = 1.5
    response_decel: float = 6.0
    steer_bias: float = 0.1
    corridor_margin: float = 0.3
    lookahead: float = 60.0

    def __post_init__(self):
        if self.ttc_long_threshold <= 0.0 or self.ttc_lat_threshold <= 0.0:
            raise ValidationError("TTC thresholds must be positive")
        if not 0.0 < self.response_decel <= A_MAX_ABS:
            raise ValidationError("response_decel outside (0, a_max]")

    @classmethod
    def from_dict(cls, d: dict) -> "RssParams":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class PolicyDecision:
    control: ControlInput
    rationale: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"accel": self.control.accel, "steer": self.control.steer,
                "rationale": self.rationale}


# ----------------------------------------------------------------------------
# Shared building blocks


def ego_route(world: WorldState, ego_id):
    route = world.routes.get(ego_id)
    if route is None:
        raise RoutingError(f"actor {ego_id!r} has no route")
    return route


def pure_pursuit(world: WorldState, ego_id, gains: PolicyGains = PolicyGains()) -> float:
    """Steering angle toward the route centerline point one lookahead ahead."""
    state, shape = world.actor(ego_id)
    route = ego_route(world, ego_id)
    ld = max(gains.lookahead_min, gains.lookahead_time * state.speed)
    tx, ty = route.path.xy_at(route.s + ld)
    dx, dy = tx - state.x, ty - state.y
    alpha = math.atan2(dy, dx) - state.heading
    dist = math.hypot(dx, dy)
    if dist < 1e-6:
        return 0.0
    steer = math.atan2(2.0 * shape.wheelbase * math.sin(alpha), dist)
    return min(max(steer, -STEER_MAX), STEER_MAX)


def cruise_target(world: WorldState, ego_id, gains: PolicyGains = PolicyGains()) -> float:
    """Lane speed limit, lowered ahead of slower segments (e.g. turning connectors)."""
    state, _ = world.actor(ego_id)
    route = ego_route(world, ego_id)
    path, s = route.path, route.s
    b = gains.profile_decel
    horizon = state.speed * state.speed / (2.0 * b) + 10.0
    i0 = path.segment(s)
    sl, lims = path.cols[0], path.cols[4]
    i1 = min(len(lims), path.segment(s + horizon) + 2)
    best = lims[i0]
    for i in range(i0 + 1, i1):
        lim = lims[i]
        if lim < best:
            best = min(best, math.sqrt(lim * lim + 2.0 * b * (sl[i] - s)))
    return float(best)


def cruise_accel(v: float, v_target: float, gains: PolicyGains) -> float:
    return gains.k_v * (v_target - v)


def _clamp_accel(a: float, gains: PolicyGains) -> float:
    return min(max(a, -gains.a_max_brake), gains.a_max_accel)


def stop_line(world: WorldState, ego_id):
    """Distance from the front bumper to the next stop line and its phase."""
    state, shape = world.actor(ego_id)
    route = ego_route(world, ego_id)
    front = route.s + 0.5 * shape.length
    nxt = route.next_stop(front)
    if nxt is None:
        return None
    k, s_stop, node, axis = nxt
    light = world.light(node)
    phase = light.phase(axis) if light is not None else "Green"
    return k, s_stop - front, phase


def holds_for_signal(world: WorldState, ego_id, gains: PolicyGains) -> bool:
    """True when the SFF cruise target must drop to zero for a red/yellow light.

    The hold starts once the exponential stop of the cruise loop (distance
    v / k_v) reaches the stop line, or inside the fixed stop zone. A yellow
    light that can no longer be stopped for is driven through.
    """
    info = stop_line(world, ego_id)
    if info is None:
        return False
    _, d, phase = info
    if phase == "Green" or d < -0.5:
        return False
    v = world.actor(ego_id)[0].speed
    reach = v / gains.k_v
    if phase == "Yellow" and d - gains.stop_margin < 0.8 * reach:
        return False
    return d - gains.stop_margin <= reach + 1.0 or d <= gains.stop_zone


def follow_accel(gap: float, v: float, v_lead: float, gains: PolicyGains) -> float:
    """Constant-time-gap following with a kinematic emergency floor."""
    desired = max(gains.standstill_gap, gains.time_gap * v)
    a = gains.k_gap * (gap - desired) + gains.k_dv * (v_lead - v)
    if v > v_lead:
        need = (v - v_lead) ** 2 / (2.0 * max(gap - 1.0, 0.1))
        if need > 2.0:
            a = min(a, -need)
    return a


def signal_gap(world: WorldState, ego_id, gains: PolicyGains, comfort: float = 4.0):
    """Gap to a stop line that must be treated as a stopped obstacle, else None."""
    info = stop_line(world, ego_id)
    if info is None:
        return None
    _, d, phase = info
    if phase == "Green" or d < -0.5:
        return None
    v = world.actor(ego_id)[0].speed
    if phase == "Yellow" and d - gains.stop_margin < v * v / (2.0 * comfort):
        return None
    return d - gains.stop_margin + gains.standstill_gap


def corridor(world: WorldState, ego_id, lookahead: float, margin: float = 0.3):
    """Actors whose centers lie in the ego's swept route corridor ahead.

    Returns a list of dicts with gap (bumper to bumper along the path),
    along-path speed, relative heading and lateral offset, nearest first.
    """
    state, shape = world.actor(ego_id)
    route = ego_route(world, ego_id)
    arr = world.arrays
    i_ego = world.index(ego_id)
    dx, dy = arr["x"] - state.x, arr["y"] - state.y
    ahead = dx * math.cos(state.heading) + dy * math.sin(state.heading)
    mask = ((dx * dx + dy * dy) < (lookahead + 10.0) ** 2) & (ahead > -10.0)
    mask[i_ego] = False
    near = np.flatnonzero(mask)
    if len(near) == 0:
        return []
    pts = np.stack([arr["x"][near], arr["y"][near]], axis=1)
    s, lat, seg = route.path.project_many(pts, route.s - 5.0, route.s + lookahead)
    rel = np.remainder(arr["heading"][near] - route.path.seg_headings[seg] + math.pi,
                       2.0 * math.pi) - math.pi
    c, sn = np.abs(np.cos(rel)), np.abs(np.sin(rel))
    half_other = 0.5 * (arr["width"][near] * c + arr["length"][near] * sn)
    ok = (s > route.s) & (np.abs(lat) <= 0.5 * shape.width + half_other + margin)
    if not ok.any():
        return []
    ext = 0.5 * (arr["length"][near] * c + arr["width"][near] * sn)
    gap = s - route.s - 0.5 * shape.length - ext
    v_along = arr["speed"][near] * np.cos(rel)
    out = [{"index": int(near[k]), "gap": float(gap[k]), "v_along": float(v_along[k]),
            "rel_heading": float(rel[k]), "lat": float(lat[k])} for k in np.flatnonzero(ok)]
    out.sort(key=lambda r: r["gap"])
    return out


def _lead_vehicle(world, ego_id, gains, lookahead=60.0):
    for r in corridor(world, ego_id, lookahead, margin=0.0):
        if abs(r["rel_heading"]) < math.pi / 4:
            return r
    return None


# ----------------------------------------------------------------------------
# Policies


def no_policy_step(world: WorldState, ego_id, gains: PolicyGains = PolicyGains()) -> PolicyDecision:
    """Cruise along the route, blind to other actors and to signals."""
    state, _ = world.actor(ego_id)
    v_t = cruise_target(world, ego_id, gains)
    a = _clamp_accel(cruise_accel(state.speed, v_t, gains), gains)
    steer = pure_pursuit(world, ego_id, gains)
    return PolicyDecision(ControlInput(a, steer), {"v_target": v_t, "total_rho": 0.0})


def _autopilot_terms(world, ego_id, gains):
    state, _ = world.actor(ego_id)
    v = state.speed
    v_t = cruise_target(world, ego_id, gains)
    a = cruise_accel(v, v_t, gains)
    terms = {"v_target": v_t, "cruise": a}
    lead = _lead_vehicle(world, ego_id, gains)
    if lead is not None:
        a_f = follow_accel(lead["gap"], v, max(lead["v_along"], 0.0), gains)
        terms["leader_gap"] = lead["gap"]
        terms["follow"] = a_f
        a = min(a, a_f)
    g = signal_gap(world, ego_id, gains)
    if g is not None:
        a_s = follow_accel(g, v, 0.0, gains)
        terms["signal"] = a_s
        a = min(a, a_s)
    return _clamp_accel(a, gains), pure_pursuit(world, ego_id, gains), terms


def autopilot_step(world: WorldState, ego_id, gains: PolicyGains = PolicyGains()) -> PolicyDecision:
    """Rule-based leader follower: same-lane leader and signals only.

    Cross traffic is invisible to it by design.
    """
    a, steer, terms = _autopilot_terms(world, ego_id, gains)
    terms["total_rho"] = 0.0
    return PolicyDecision(ControlInput(a, steer), terms)


def _lateral_threat(world, ego_id, params: RssParams):
    state, shape = world.actor(ego_id)
    arr = world.arrays
    i_ego = world.index(ego_id)
    c, s = math.cos(state.heading), math.sin(state.heading)
    rx, ry = arr["x"] - state.x, arr["y"] - state.y
    fx = rx * c + ry * s
    fy = -rx * s + ry * c
    vx = arr["speed"] * np.cos(arr["heading"]) - state.speed * c
    vy = arr["speed"] * np.sin(arr["heading"]) - state.speed * s
    lat_v = -vx * s + vy * c
    best = (math.inf, None, 0.0)
    for j in np.flatnonzero((np.abs(fx) < 0.5 * (shape.length + arr["length"]) + 5.0)
                            & (np.abs(fy) < 15.0)):
        if j == i_ego:
            continue
        half = 0.5 * (shape.width + max(arr["width"][j], arr["length"][j]))
        gap = abs(fy[j]) - half
        closing = -math.copysign(1.0, fy[j]) * lat_v[j]
        if closing <= 1e-6:
            continue
        ttc = max(gap, 0.0) / closing
        if ttc < best[0]:
            best = (ttc, int(j), math.copysign(1.0, fy[j]))
    return best


def rss_baseline_step(world: WorldState, ego_id, params: RssParams = RssParams(),
                      gains: PolicyGains = PolicyGains()) -> PolicyDecision:
    """Time-to-collision rule: brake, drive away, or continue with the autopilot."""
    state, _ = world.actor(ego_id)
    a_nom, steer_nom, terms = _autopilot_terms(world, ego_id, gains)
    ttc_long = math.inf
    for r in corridor(world, ego_id, params.lookahead, params.corridor_margin):
        closing = state.speed - r["v_along"]
        ttc = 0.0 if r["gap"] <= 0.0 else (r["gap"] / closing if closing > 1e-9 else math.inf)
        ttc_long = min(ttc_long, ttc)
    ttc_lat, threat, side = _lateral_threat(world, ego_id, params)
    terms.update({"ttc_long": ttc_long, "ttc_lat": ttc_lat, "total_rho": 0.0})
    if ttc_long < params.ttc_long_threshold:
        terms["decision"] = "brake"
        a = min(a_nom, -params.response_decel)
        return PolicyDecision(ControlInput(_clamp_accel(a, gains), steer_nom), terms)
    if ttc_lat < params.ttc_lat_threshold:
        terms["decision"] = "drive_away"
        terms["threat"] = world.actors[threat][0].actor_id
        steer = min(max(steer_nom - side * params.steer_bias, -STEER_MAX), STEER_MAX)
        return PolicyDecision(ControlInput(a_nom, steer), terms)
    terms["decision"] = "continue"
    return PolicyDecision(ControlInput(a_nom, steer_nom), terms)


def pair_potentials(world: WorldState, ego_id, cfg: FieldConfig | None = None,
                    source: str = "oracle", model=None) -> dict:
    """rho(ego, B) for every other actor whose field window can reach the ego's."""
    cfg = cfg or FieldConfig()
    ego, eshape = world.actor(ego_id)
    fields = _field_source(world, cfg, source, model)
    fe = None
    r_e = cfg.envelope_radius(ego, eshape)
    out = {}
    for b, bshape in world.actors:
        if b.actor_id == ego_id:
            continue
        if math.hypot(b.x - ego.x, b.y - ego.y) > r_e + cfg.envelope_radius(b, bshape):
            continue
        if fe is None:
            fe = fields(ego_id)
        rho = lattice_potential(fe, fields(b.actor_id))
        if rho > 0.0:
            out[b.actor_id] = rho
    return out


def _field_source(world, cfg, source, model):
    if source == "oracle":
        def get(aid):
            s, sh = world.actor(aid)
            return actor_lattice_field(s, sh, cfg.procedure, cfg.kernel_radius, cfg.cell,
                                       cfg.identity_kernel, cfg.supersample)
        return get
    if source == "model":
        if model is None:
            raise ValidationError("claimed_set_source 'model' needs a predictor model")
        from .predictor import predicted_lattice_field

        return lambda aid: predicted_lattice_field(model, world, aid, cfg)
    raise ValidationError(f"unknown claimed-set source {source!r}")


def sff_accel(v: float, v_target: float, total_rho: float, gains: PolicyGains) -> float:
    return _clamp_accel(gains.k_v * (v_target - v) - gains.k_rho * total_rho, gains)


def sff_policy_step(world: WorldState, ego_id, claimed_set_source: str = "oracle",
                    gains: PolicyGains = PolicyGains(), cfg: FieldConfig | None = None,
                    model=None) -> PolicyDecision:
    """Integrated controller: cruise toward the target speed, brake with the total potential."""
    state, _ = world.actor(ego_id)
    pairs = pair_potentials(world, ego_id, cfg, claimed_set_source, model)
    total = float(sum(pairs.values()))
    v_t = cruise_target(world, ego_id, gains)
    hold = holds_for_signal(world, ego_id, gains)
    if hold:
        v_t = 0.0
    a = sff_accel(state.speed, v_t, total, gains)
    steer = pure_pursuit(world, ego_id, gains)
    dominant = max(pairs, key=pairs.get) if pairs else None
    rationale = {"total_rho": total, "pairs": pairs, "dominant": dominant, "v_target": v_t,
                 "signal_hold": hold, "cruise": gains.k_v * (v_t - state.speed),
                 "potential": -gains.k_rho * total}
    return PolicyDecision(ControlInput(a, steer), rationale)


def gains_dict(g: PolicyGains) -> dict:
    return asdict(g)
