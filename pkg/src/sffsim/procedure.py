"""Safety procedures: braking families and their trajectory rollouts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import ValidationError
from .world import A_MAX_ABS, STEER_MAX, ActorState, VehicleShape, advance


@dataclass(frozen=True)
class PolicyParams:
    decel: float
    steer_hold: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.decel) and math.isfinite(self.steer_hold)):
            raise ValidationError("non-finite policy parameters")
        if not (0.0 < self.decel <= A_MAX_ABS):
            raise ValidationError(f"decel {self.decel} outside (0, {A_MAX_ABS}]")
        if abs(self.steer_hold) > STEER_MAX:
            raise ValidationError(f"steer_hold {self.steer_hold} exceeds {STEER_MAX}")

    def curvature(self, shape: VehicleShape) -> float:
        return math.tan(self.steer_hold) / shape.wheelbase


@dataclass(frozen=True)
class ProcedureConfig:
    decels: tuple = (4.0, 6.0, 8.0)
    steers: tuple = (-0.05, 0.0, 0.05)
    horizon: float = 3.0
    dt: float = 0.1

    @classmethod
    def from_dict(cls, d: dict) -> "ProcedureConfig":
        return cls(tuple(d.get("decels", cls.decels)), tuple(d.get("steers", cls.steers)),
                   float(d.get("horizon", cls.horizon)), float(d.get("dt", cls.dt)))

    def to_dict(self) -> dict:
        return {"decels": list(self.decels), "steers": list(self.steers),
                "horizon": self.horizon, "dt": self.dt}


@dataclass(frozen=True)
class SafetyProcedure:
    policies: tuple
    horizon: float = 3.0
    dt: float = 0.1

    def __post_init__(self):
        if not self.policies:
            raise ValidationError("a safety procedure needs at least one policy")
        if not (self.horizon > 0.0 and self.dt > 0.0 and self.horizon >= self.dt):
            raise ValidationError("need horizon >= dt > 0")
        object.__setattr__(self, "policies", tuple(self.policies))

    def __len__(self):
        return len(self.policies)

    @property
    def min_decel(self) -> float:
        return min(p.decel for p in self.policies)

    def strongest(self) -> PolicyParams:
        """Hardest braking policy, preferring the smallest steering hold."""
        return min(self.policies, key=lambda p: (-p.decel, abs(p.steer_hold), p.steer_hold))

    def reach(self, speed: float) -> float:
        """Upper bound on distance travelled by any policy from ``speed``."""
        # the clamped final step can overshoot v^2/2b by at most b*dt^2/2
        slack = max(p.decel for p in self.policies) * self.dt * self.dt / 2.0
        stop = speed * speed / (2.0 * self.min_decel) + slack
        return min(stop, speed * (self.n_steps * self.dt))

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.horizon / self.dt - 1e-9))


def default_procedure(config: ProcedureConfig | None = None) -> SafetyProcedure:
    config = config or ProcedureConfig()
    if not config.decels or not config.steers:
        raise ValidationError("decel and steer level lists must be non-empty")
    policies = tuple(PolicyParams(float(d), float(s))
                     for d, s in product(config.decels, config.steers))
    return SafetyProcedure(policies, config.horizon, config.dt)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: tuple

    def __len__(self):
        return len(self.states)

    @property
    def samples(self):
        return list(zip(self.times.tolist(), self.states))

    def positions(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.states])


def rollout_arrays(x: float, y: float, heading: float, speed: float, accel: float,
                   curvature: float, horizon: float, dt: float) -> np.ndarray:
    """Constant (accel, curvature) rollout until standstill or the horizon.

    Returns an (n, 4) array of (x, y, heading, speed) including the start.
    """
    n_max = max(1, math.ceil(horizon / dt - 1e-9))
    out = [(x, y, heading, speed)]
    v = speed
    for _ in range(n_max):
        if v <= 0.0:
            break
        x, y, heading, v = advance(x, y, heading, v, accel, curvature, dt)
        out.append((x, y, heading, v))
    return np.array(out)


def rollout(state: ActorState, shape: VehicleShape, policy: PolicyParams,
            horizon: float, dt: float) -> Trajectory:
    if not isinstance(policy, PolicyParams):
        raise ValidationError("policy must be PolicyParams")
    if not (dt > 0.0 and horizon >= dt):
        raise ValidationError("need horizon >= dt > 0")
    arr = rollout_arrays(state.x, state.y, state.heading, state.speed, -policy.decel,
                         policy.curvature(shape), horizon, dt)
    states = tuple(ActorState(*row, actor_id=state.actor_id) for row in arr)
    return Trajectory(np.arange(len(arr)) * dt, states)
