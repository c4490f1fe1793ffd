import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import Polygon

from sffsim.errors import ValidationError
from sffsim.world import (ActorState, ControlInput, VehicleShape, WorldState, footprint_polygon,
                          normalize_angle, polygon_area, polygons_overlap, step_kinematics)

SHAPE = VehicleShape(4.5, 1.9, 2.7)
BOX = VehicleShape(4.0, 2.0, 2.5)


def test_straight_constant_speed():
    s = step_kinematics(ActorState(0, 0, 0, 10), ControlInput(0, 0), SHAPE, 0.1)
    assert s.x == pytest.approx(1.0) and s.y == 0.0 and s.speed == 10.0


def test_speed_clamps_at_zero():
    s = step_kinematics(ActorState(0, 0, 0, 1), ControlInput(-8, 0), SHAPE, 0.5)
    assert s.speed == 0.0


def test_heading_rate_matches_hand_value():
    s = step_kinematics(ActorState(0, 0, 0, 10), ControlInput(0, 0.1), VehicleShape(4.5, 1.9, 2.7),
                        0.1)
    assert s.heading == pytest.approx(0.03716, abs=5e-6)


def test_non_finite_inputs_rejected():
    with pytest.raises(ValidationError):
        ActorState(float("nan"), 0, 0, 1)
    with pytest.raises(ValidationError):
        ControlInput(float("inf"), 0)
    with pytest.raises(ValidationError):
        step_kinematics(ActorState(0, 0, 0, 1), ControlInput(), SHAPE, float("nan"))


def test_state_invariants():
    with pytest.raises(ValidationError):
        ActorState(0, 0, 0, -1)
    assert ActorState(0, 0, 3 * math.pi, 0).heading == pytest.approx(math.pi)
    assert normalize_angle(-math.pi) == math.pi


def test_axis_aligned_footprint():
    p = footprint_polygon(ActorState(0, 0, 0, 0), BOX)
    assert sorted(map(tuple, np.round(p, 12))) == sorted([(2, 1), (2, -1), (-2, 1), (-2, -1)])
    assert polygon_area(p) > 0  # counter-clockwise


def test_rotated_footprint():
    a = footprint_polygon(ActorState(0, 0, 0, 0), BOX)
    b = footprint_polygon(ActorState(0, 0, math.pi / 2, 0), BOX)
    rot = np.array([[0, -1], [1, 0]])
    np.testing.assert_allclose(b, a @ rot.T, atol=1e-12)


def test_footprint_at_pi_over_4():
    p = footprint_polygon(ActorState(5, 3, math.pi / 4, 0), BOX)
    c = math.sqrt(0.5)
    r = np.array([[c, -c], [c, c]])
    expect = {tuple(np.round(np.array([5, 3]) + r @ np.array([sx * 2, sy * 1]), 9))
              for sx in (1, -1) for sy in (1, -1)}
    assert {tuple(np.round(v, 9)) for v in p} == expect


def _square(cx, cy):
    return np.array([(cx - .5, cy - .5), (cx + .5, cy - .5), (cx + .5, cy + .5), (cx - .5, cy + .5)])


def test_overlap_examples():
    a = footprint_polygon(ActorState(0, 0, 0.3, 0), SHAPE)
    assert polygons_overlap(a, a)
    assert not polygons_overlap(a, footprint_polygon(ActorState(100, 0, 0, 0), SHAPE))
    assert polygons_overlap(_square(0, 0), _square(0.9, 0))
    assert not polygons_overlap(_square(0, 0), _square(1.1, 0))


def _sampled_overlap(a, b, res=0.01):
    lo = np.maximum(a.min(axis=0), b.min(axis=0))
    hi = np.minimum(a.max(axis=0), b.max(axis=0))
    if np.any(hi <= lo):
        return False
    xs = np.arange(lo[0] + res / 2, hi[0], res)
    ys = np.arange(lo[1] + res / 2, hi[1], res)
    px, py = np.meshgrid(xs, ys)

    def inside(poly):
        ok = np.ones(px.shape, bool)
        for p, q in zip(poly, np.roll(poly, -1, axis=0)):
            ok &= (q[0] - p[0]) * (py - p[1]) - (q[1] - p[1]) * (px - p[0]) >= 0
        return ok
    return bool((inside(a) & inside(b)).any())


def test_unit_square_oracle():
    assert _sampled_overlap(_square(0, 0), _square(0.9, 0))
    assert not _sampled_overlap(_square(0, 0), _square(1.1, 0))


def test_overlap_matches_shapely_on_random_pairs():
    rng = np.random.default_rng(7)
    disagreements = 0
    for _ in range(1000):
        sa = VehicleShape(*sorted(rng.uniform(1.0, 6.0, 2))[::-1], 0.5)
        sb = VehicleShape(*sorted(rng.uniform(1.0, 6.0, 2))[::-1], 0.5)
        a = footprint_polygon(ActorState(0, 0, rng.uniform(-math.pi, math.pi), 0), sa)
        b = footprint_polygon(ActorState(*rng.uniform(-7, 7, 2), rng.uniform(-math.pi, math.pi),
                                         0), sb)
        truth = Polygon(a).intersection(Polygon(b)).area > 1e-9
        disagreements += polygons_overlap(a, b) != truth
    assert disagreements == 0


def test_degenerate_polygon_rejected():
    flat = np.array([(0, 0), (1, 0), (2, 0)])
    with pytest.raises(ValidationError):
        polygons_overlap(flat, _square(0, 0))


angles = st.floats(-10, 10)


@given(angles, st.floats(0, 30), st.floats(-5, 5), st.floats(-5, 5))
def test_footprint_area_is_length_times_width(h, v, x, y):
    p = footprint_polygon(ActorState(x, y, h, v), SHAPE)
    assert polygon_area(p) == pytest.approx(SHAPE.length * SHAPE.width, rel=1e-9)


@given(angles, st.floats(0, 30), st.floats(-8, 8))
def test_zero_steer_keeps_heading(h, v, a):
    s0 = ActorState(0, 0, h, v)
    assert step_kinematics(s0, ControlInput(a, 0.0), SHAPE, 0.1).heading == s0.heading


@given(angles, st.floats(0, 30), st.floats(-0.6, 0.6))
def test_zero_accel_keeps_speed(h, v, steer):
    s0 = ActorState(0, 0, h, v)
    assert step_kinematics(s0, ControlInput(0.0, steer), SHAPE, 0.1).speed == v


@given(angles, st.floats(0, 30), st.floats(-8, 8), st.floats(-0.6, 0.6))
def test_step_is_deterministic(h, v, a, steer):
    s0 = ActorState(1.5, -2.0, h, v)
    u = ControlInput(a, steer)
    assert step_kinematics(s0, u, SHAPE, 0.1) == step_kinematics(s0, u, SHAPE, 0.1)


def test_world_lookup():
    w = WorldState(0.0, ((ActorState(0, 0, 0, 0, "a"), SHAPE),))
    assert w.actor("a")[0].actor_id == "a"
    with pytest.raises(KeyError):
        w.actor("missing")
    with pytest.raises(ValidationError):
        WorldState(0.0, ((ActorState(0, 0, 0, 0, "a"), SHAPE), (ActorState(9, 0, 0, 0, "a"), SHAPE)))
