import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from sffsim.claimed import GridSpec, SmoothField
from sffsim.render import (OPACITY_THRESHOLD, fields_from_json, fields_to_json, load_snapshot,
                           render_frame, snapshot, svg_document, world_from_snapshot)
from sffsim.roadmap import build_grid_town
from sffsim.sim import ScenarioConfig, spawn_traffic
from sffsim.world import ActorState, VehicleShape, WorldState

NS = "{http://www.w3.org/2000/svg}"


def _cls(root, name):
    return [e for e in root.iter() if e.get("class") == name]


def test_empty_world_renders_roads_only():
    m = build_grid_town(2, 2)
    root = ET.fromstring(svg_document(WorldState(0.0, (), m.lights(0.0), m)).split("\n", 1)[1])
    assert len(_cls(root, "road")) == len(m.lanes)
    assert not _cls(root, "npc") and not _cls(root, "ego") and not _cls(root, "field-cell")


def test_field_cells_match_values():
    spec = GridSpec(0.0, 0.0, 0.5, 8, 6)
    vals = np.zeros(spec.shape)
    vals[2, 3] = 0.8
    vals[2, 4] = 0.3
    vals[5, 0] = 0.005  # below threshold
    vals[0, 7] = 1.7  # clipped
    w = WorldState(0.0, ((ActorState(1, 1, 0, 0, "npc0"), VehicleShape(4.5, 1.9, 2.7)),))
    root = ET.fromstring(svg_document(w, [SmoothField(spec, vals)]).split("\n", 1)[1])
    cells = _cls(root, "field-cell")
    assert len(cells) == int(np.count_nonzero(np.clip(vals, 0, 1) > OPACITY_THRESHOLD))
    opac = sorted(float(c.get("fill-opacity")) for c in cells)
    assert opac == pytest.approx([0.3, 0.8, 1.0])
    assert all(c.get("fill") == "#ff0000" for c in cells)
    assert len(_cls(root, "npc")) == 1


def test_max_opacity_equals_max_field_value():
    w = spawn_traffic(ScenarioConfig(npc_count=2, seed=1))
    st, _ = w.actor("npc0")
    spec = GridSpec.centered(st.x, st.y, 10, 10, 0.5)
    vals = np.random.default_rng(0).random(spec.shape) * 0.9
    root = ET.fromstring(svg_document(w, [SmoothField(spec, vals)]).split("\n", 1)[1])
    opac = [float(c.get("fill-opacity")) for c in _cls(root, "field-cell")]
    assert max(opac) == pytest.approx(vals.max(), rel=1e-5)
    assert len(_cls(root, "ego")) == 1 and len(_cls(root, "light")) > 0


def test_snapshot_roundtrip(tmp_path):
    w = spawn_traffic(ScenarioConfig(npc_count=3, seed=2))
    path = tmp_path / "snap.json"
    path.write_text(json.dumps(snapshot(w)))
    back = load_snapshot(path)
    assert back.actors == w.actors
    assert set(back.map.lanes) == set(w.map.lanes)
    spec = GridSpec(0, 0, 0.5, 3, 2)
    f = SmoothField(spec, np.arange(6.0).reshape(2, 3) / 6)
    g = fields_from_json(json.loads(json.dumps(fields_to_json([f]))))[0]
    assert g.spec == spec and np.array_equal(g.values, f.values)
    doc = render_frame(world_from_snapshot(snapshot(w)), [f], tmp_path / "out.svg")
    assert (tmp_path / "out.svg").read_text() == doc
