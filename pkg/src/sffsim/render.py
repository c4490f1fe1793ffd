"""SVG scene rendering: roads, claimed-set fields, vehicles and signal states."""

from __future__ import annotations

import json
from xml.sax.saxutils import quoteattr

import numpy as np

from .claimed import GridSpec, SmoothField
from .roadmap import MapGraph
from .world import ActorState, VehicleShape, WorldState

OPACITY_THRESHOLD = 0.01
PHASE_COLORS = {"Green": "#22aa22", "Yellow": "#eecc00", "Red": "#dd2222"}
EGO_COLOR = "#00c000"
NPC_COLOR = "#ffd700"
FIELD_COLOR = "#ff0000"
ROAD_COLOR = "#999999"
DOT_RADIUS = 1.2
MARGIN = 10.0


def _n(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".") if v != 0 else "0"


# ----------------------------------------------------------------------------
# Snapshots


def snapshot(world: WorldState, ego_id="ego") -> dict:
    """JSON-ready description of a world: actors, lights and (if present) the map."""
    d = {"time": world.time, "ego": ego_id,
         "actors": [{"state": st.to_dict(), "shape": sh.to_dict()} for st, sh in world.actors],
         "lights": [{"id": lt.intersection_id, "phases": [list(p) for p in lt.phases]}
                    for lt in world.lights]}
    if world.map is not None:
        d["map"] = world.map.to_dict()
    return d


def world_from_snapshot(d: dict) -> WorldState:
    actors = []
    for a in d.get("actors", []):
        s = a["state"]
        st = ActorState(s["x"], s["y"], s["heading"], s["speed"], s.get("id"))
        actors.append((st, VehicleShape(**a["shape"])))
    m = MapGraph.from_dict(d["map"]) if d.get("map") else None
    lights = m.lights(d.get("time", 0.0)) if m is not None else ()
    return WorldState(d.get("time", 0.0), tuple(actors), lights, m)


def fields_to_json(fields) -> list:
    return [{"spec": f.spec.to_dict(), "values": f.values.tolist()} for f in fields]


def fields_from_json(items) -> list:
    return [SmoothField(GridSpec.from_dict(it["spec"]), np.asarray(it["values"], dtype=float))
            for it in items]


# ----------------------------------------------------------------------------
# Rendering


def _bounds(world: WorldState, fields) -> tuple:
    xs, ys = [], []
    if world.map is not None:
        x0, y0, x1, y1 = world.map.bounds
        xs += [x0, x1]
        ys += [y0, y1]
    for st, _ in world.actors:
        xs.append(st.x)
        ys.append(st.y)
    for f in fields:
        x0, y0, x1, y1 = f.spec.extent
        xs += [x0, x1]
        ys += [y0, y1]
    if not xs:
        return -MARGIN, -MARGIN, MARGIN, MARGIN
    return min(xs) - MARGIN, min(ys) - MARGIN, max(xs) + MARGIN, max(ys) + MARGIN


def svg_document(world: WorldState, fields=(), ego_id="ego") -> str:
    """Render to an SVG string. North is up; one user unit is one meter."""
    fields = list(fields)
    x0, y0, x1, y1 = _bounds(world, fields)
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_n(x0)} {_n(-y1)} '
           f'{_n(x1 - x0)} {_n(y1 - y0)}" width="{_n(4 * (x1 - x0))}" '
           f'height="{_n(4 * (y1 - y0))}">',
           f'<rect class="background" x="{_n(x0)}" y="{_n(-y1)}" width="{_n(x1 - x0)}" '
           f'height="{_n(y1 - y0)}" fill="#ffffff"/>']
    m = world.map
    if m is not None:
        out.append('<g class="roads">')
        for ln in m.lanes.values():
            pts = " ".join(f"{_n(x)},{_n(-y)}" for x, y in ln.points)
            out.append(f'<polyline class="road" points="{pts}" fill="none" stroke="{ROAD_COLOR}" '
                       f'stroke-width="{_n(ln.width)}" stroke-opacity="0.6"/>')
        out.append("</g>")
    # fields go under the vehicle markers
    out.append('<g class="fields">')
    for f in fields:
        spec, vals = f.spec, np.clip(f.values, 0.0, 1.0)
        for r, c in zip(*np.nonzero(vals > OPACITY_THRESHOLD)):
            x = spec.ox + c * spec.cell
            y = spec.oy + (r + 1) * spec.cell
            out.append(f'<rect class="field-cell" x="{_n(x)}" y="{_n(-y)}" '
                       f'width="{_n(spec.cell)}" height="{_n(spec.cell)}" fill="{FIELD_COLOR}" '
                       f'fill-opacity="{vals[r, c]:.6g}"/>')
    out.append("</g>")
    if m is not None and world.lights:
        out.append('<g class="lights">')
        for lt in world.lights:
            node = m.intersections.get(lt.intersection_id)
            if node is None:
                continue
            h = node.half_size
            for axis, phase in lt.phases:
                offsets = ((h, 0.0), (-h, 0.0)) if axis == "EW" else ((0.0, h), (0.0, -h))
                for dx, dy in offsets:
                    out.append(f'<circle class="light" data-axis="{axis}" '
                               f'data-phase="{phase}" cx="{_n(node.x + dx)}" '
                               f'cy="{_n(-(node.y + dy))}" r="1.5" '
                               f'fill="{PHASE_COLORS.get(phase, "#000000")}"/>')
        out.append("</g>")
    out.append('<g class="vehicles">')
    for st, _ in world.actors:
        is_ego = st.actor_id == ego_id
        cls, color = ("ego", EGO_COLOR) if is_ego else ("npc", NPC_COLOR)
        out.append(f'<circle class="{cls}" data-id={quoteattr(str(st.actor_id))} '
                   f'cx="{_n(st.x)}" cy="{_n(-st.y)}" r="{_n(DOT_RADIUS)}" fill="{color}" '
                   f'stroke="#333333" stroke-width="0.2"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_frame(world: WorldState, fields, path, ego_id="ego") -> str:
    doc = svg_document(world, fields, ego_id)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(doc)
    return doc


def load_snapshot(path) -> WorldState:
    with open(path) as fh:
        return world_from_snapshot(json.load(fh))
