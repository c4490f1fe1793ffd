import math

import numpy as np
import pytest

from sffsim.errors import ValidationError
from sffsim.procedure import (PolicyParams, ProcedureConfig, SafetyProcedure, default_procedure,
                              rollout)
from sffsim.world import ActorState, VehicleShape

SHAPE = VehicleShape(4.5, 1.9, 2.7)


def test_default_family_is_cross_product():
    proc = default_procedure()
    assert len(proc) == 9
    assert {(p.decel, p.steer_hold) for p in proc.policies} == {
        (d, s) for d in (4.0, 6.0, 8.0) for s in (-0.05, 0.0, 0.05)}
    assert all(p.decel > 0 for p in proc.policies)


def test_single_policy_family():
    proc = default_procedure(ProcedureConfig(decels=(6.0,), steers=(0.0,)))
    assert len(proc) == 1 and proc.policies[0] == PolicyParams(6.0, 0.0)


def test_invalid_families_rejected():
    with pytest.raises(ValidationError):
        default_procedure(ProcedureConfig(decels=()))
    with pytest.raises(ValidationError):
        PolicyParams(0.0)
    with pytest.raises(ValidationError):
        PolicyParams(9.0)
    with pytest.raises(ValidationError):
        PolicyParams(4.0, 0.7)
    with pytest.raises(ValidationError):
        SafetyProcedure(())


def test_strongest_prefers_straight_hard_brake():
    assert default_procedure().strongest() == PolicyParams(8.0, 0.0)


def test_stopped_actor_stays_put():
    traj = rollout(ActorState(3, 4, 1.0, 0), SHAPE, PolicyParams(6.0, 0.05), 3.0, 0.1)
    pos = traj.positions()
    assert np.all(pos == pos[0])


def test_stopping_distance_matches_closed_form():
    traj = rollout(ActorState(0, 0, 0, 10), SHAPE, PolicyParams(8.0), 3.0, 0.1)
    # closed form v^2 / 2b
    assert traj.positions()[-1, 0] == pytest.approx(10 ** 2 / (2 * 8.0), abs=0.5)
    assert traj.times[-1] == pytest.approx(1.25, abs=0.1)
    assert traj.states[-1].speed == 0.0


def test_weaker_brake_goes_farther():
    s = ActorState(0, 0, 0, 10)
    d4 = rollout(s, SHAPE, PolicyParams(4.0), 3.0, 0.1).positions()[-1, 0]
    d8 = rollout(s, SHAPE, PolicyParams(8.0), 3.0, 0.1).positions()[-1, 0]
    assert d4 > d8


def test_reach_bounds_every_rollout():
    proc = default_procedure()
    for v in (0.0, 3.0, 10.0, 25.0):
        s = ActorState(0, 0, 0.4, v)
        for p in proc.policies:
            pos = rollout(s, SHAPE, p, proc.horizon, proc.dt).positions()
            assert np.hypot(*pos[-1]) <= proc.reach(v) + 1e-9
    assert proc.reach(10.0) == pytest.approx(12.5 + 0.04)
    assert proc.reach(30.0) == pytest.approx(90.0)  # horizon-limited


def test_rollout_validation():
    with pytest.raises(ValidationError):
        rollout(ActorState(0, 0, 0, 1), SHAPE, (8.0, 0.0), 3.0, 0.1)
    with pytest.raises(ValidationError):
        rollout(ActorState(0, 0, 0, 1), SHAPE, PolicyParams(8.0), 0.05, 0.1)


def test_curvature_formula():
    assert PolicyParams(4.0, 0.05).curvature(SHAPE) == pytest.approx(math.tan(0.05) / 2.7)
