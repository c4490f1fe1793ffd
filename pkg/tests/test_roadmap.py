import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sffsim.errors import RoutingError, ValidationError
from sffsim.roadmap import (LightCycle, MapGraph, assign_random_destination, build_grid_town,
                            plan_route)


def test_default_town_counts():
    m = build_grid_town(3, 3, 100.0, 1)
    assert len([n for n in m.intersections.values() if n.signalized]) == 9
    # 12 undirected road segments, two directions each
    assert len(m.road_lanes) == 24
    assert m.is_strongly_connected()


def test_single_crossroad_has_four_approaches():
    m = build_grid_town(1, 1)
    signalized = [n for n in m.intersections.values() if n.signalized]
    assert len(signalized) == 1
    approaches = [k for k in m.road_lanes if m.lanes[k].dst == signalized[0].node_id]
    assert len(approaches) == 4


@pytest.mark.parametrize("rows,cols,lanes", [(1, 1, 1), (2, 2, 1), (1, 3, 1), (2, 3, 1),
                                             (3, 3, 2), (2, 2, 2), (4, 2, 1)])
def test_any_town_is_strongly_connected(rows, cols, lanes):
    assert build_grid_town(rows, cols, 80.0, lanes).is_strongly_connected()


def test_invalid_town():
    with pytest.raises(ValidationError):
        build_grid_town(0, 3)
    with pytest.raises(ValidationError):
        build_grid_town(3, 3, median=-1.0)
    with pytest.raises(ValidationError):
        LightCycle(10.0, 3.0, 12.0)


def test_keep_right_and_lane_offsets():
    m = build_grid_town(1, 2, 100.0, 2, median=2.0)
    east = m.lanes["n0_0>n0_1#0"]
    assert np.allclose(east.points[:, 1], -(1.0 + 1.75))
    assert np.allclose(m.lanes["n0_0>n0_1#1"].points[:, 1], -(1.0 + 5.25))
    assert np.allclose(m.lanes["n0_1>n0_0#0"].points[:, 1], 1.0 + 1.75)


def test_light_phases_are_exclusive():
    m = build_grid_town(2, 2)
    for t in np.arange(0.0, 60.0, 0.5):
        for lt in m.lights(float(t)):
            phases = dict(lt.phases)
            assert not (phases["EW"] != "Red" and phases["NS"] != "Red")


def test_json_roundtrip():
    m = build_grid_town(2, 2)
    back = MapGraph.from_json(m.to_json())
    assert set(back.lanes) == set(m.lanes)
    assert back.successors == m.successors
    for k in m.lanes:
        np.testing.assert_allclose(back.lanes[k].points, m.lanes[k].points)


def _brute_force_shortest(m, src, dst):
    """Exhaustive enumeration of simple lane paths (2x2 town is small enough)."""
    best = float("inf")
    stack = [(src, (src,), 0.0)]
    while stack:
        lane, path, length = stack.pop()
        if lane == dst:
            best = min(best, length)
            continue
        for nxt in m.successors[lane]:
            if nxt not in path:
                stack.append((nxt, path + (nxt,), length + m.lanes[lane].length))
    return best


def test_shortest_route_matches_exhaustive_search():
    m = build_grid_town(2, 2, 60.0)
    for src, dst in itertools.permutations(m.road_lanes, 2):
        route = plan_route(m, src, dst, 0.0)
        assert route.goal_s == pytest.approx(_brute_force_shortest(m, src, dst), rel=1e-9)


def test_route_validity():
    m = build_grid_town()
    rng = np.random.default_rng(3)
    for lane in m.road_lanes[:8]:
        route = assign_random_destination(m, lane, 5.0, rng)
        assert route.lanes[0] == lane and m.lanes[route.lanes[-1]].kind == "road"
        for u, v in zip(route.lanes, route.lanes[1:]):
            assert v in m.successors[u]
        assert route.goal_s - 5.0 >= 100.0 - 1e-9
        assert route.goal_s <= route.length + 1e-9


def test_one_by_one_destination_on_an_approach():
    m = build_grid_town(1, 1)
    rng = np.random.default_rng(0)
    route = assign_random_destination(m, m.road_lanes[0], 0.0, rng, min_distance=10.0)
    assert route.lanes[-1] in m.road_lanes


def test_no_route_to_same_lane():
    m = build_grid_town()
    with pytest.raises(RoutingError):
        plan_route(m, m.road_lanes[0], m.road_lanes[0], 10.0)
    with pytest.raises(RoutingError):
        plan_route(m, m.road_lanes[0], "nowhere", 10.0)


@given(st.floats(0.0, 1.0))
def test_projection_recovers_arc_length(frac):
    m = build_grid_town()
    route = plan_route(m, "n0_0>n0_1#0", "n1_1>n2_1#0", 10.0)
    s = frac * route.length
    x, y = route.xy_at(s)
    s_back, lateral = route.project(x, y)[:2]
    assert s_back == pytest.approx(s, abs=1e-6) and abs(lateral) < 1e-6


def test_drivable_mask():
    m = build_grid_town(1, 2)
    lane = m.lanes["n0_0>n0_1#0"]
    on = lane.point_at(0.5 * lane.length)
    assert m.drivable.lookup(on[None])[0] == 1
    assert m.drivable.lookup(np.array([[50.0, 40.0]]))[0] == 0
