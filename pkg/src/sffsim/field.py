"""Safety potential, safety force and the non-increase check."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .claimed import GridSpec, LatticeField, SmoothField, actor_lattice_field
from .errors import ValidationError
from .procedure import SafetyProcedure, default_procedure
from .world import ActorState, ControlInput, VehicleShape, WorldState, step_kinematics


@dataclass(frozen=True)
class FieldConfig:
    procedure: SafetyProcedure = field(default_factory=default_procedure)
    cell: float = 0.5
    kernel_radius: float = 1.5
    identity_kernel: bool = False
    fd_step: float = 0.25
    supersample: int = 4

    @property
    def pad(self) -> float:
        return self.kernel_radius + 3.0 * self.cell

    def envelope_radius(self, state: ActorState, shape: VehicleShape) -> float:
        """Distance from the actor beyond which its resampled field is zero."""
        return self.procedure.reach(state.speed) + shape.half_diagonal + self.pad


@dataclass(frozen=True)
class SafetyReading:
    rho: float
    force: tuple
    pair: tuple


def safety_potential(a: SmoothField, b: SmoothField) -> float:
    """Overlap integral sum(a * b) * cell_area of two fields on one grid."""
    if a.spec != b.spec:
        raise ValidationError(f"grid spec mismatch: {a.spec} vs {b.spec}")
    rho = float(np.vdot(a.values, b.values)) * a.spec.cell_area
    return max(rho, 0.0)


def lattice_potential(fa: LatticeField, fb: LatticeField) -> float:
    """Safety potential of two lattice fields evaluated on their shared window."""
    ha, wa = fa.values.shape
    hb, wb = fb.values.shape
    c0, c1 = max(fa.col0, fb.col0), min(fa.col0 + wa, fb.col0 + wb)
    r0, r1 = max(fa.row0, fb.row0), min(fa.row0 + ha, fb.row0 + hb)
    if c0 >= c1 or r0 >= r1:
        return 0.0
    spec = GridSpec(c0 * fa.cell, r0 * fa.cell, fa.cell, c1 - c0, r1 - r0)
    va = fa.values[r0 - fa.row0:r1 - fa.row0, c0 - fa.col0:c1 - fa.col0]
    vb = fb.values[r0 - fb.row0:r1 - fb.row0, c0 - fb.col0:c1 - fb.col0]
    return safety_potential(SmoothField(spec, va), SmoothField(spec, vb))


def _lattice(state, shape, cfg: FieldConfig) -> LatticeField:
    return actor_lattice_field(state, shape, cfg.procedure, cfg.kernel_radius, cfg.cell,
                               cfg.identity_kernel, cfg.supersample)


def pair_potential(a: ActorState, shape_a: VehicleShape, b: ActorState,
                   shape_b: VehicleShape, cfg: FieldConfig | None = None) -> float:
    cfg = cfg or FieldConfig()
    reach = cfg.envelope_radius(a, shape_a) + cfg.envelope_radius(b, shape_b)
    if math.hypot(a.x - b.x, a.y - b.y) > reach:
        return 0.0
    return lattice_potential(_lattice(a, shape_a, cfg), _lattice(b, shape_b, cfg))


def potential_gradient(a: ActorState, shape_a: VehicleShape, b: ActorState,
                       shape_b: VehicleShape, cfg: FieldConfig | None = None,
                       h: float | None = None) -> np.ndarray:
    """Central-difference gradient of the pair potential w.r.t. A's position."""
    cfg = cfg or FieldConfig()
    h = cfg.fd_step if h is None else h
    if not h > 0.0:
        raise ValidationError("finite-difference step must be positive")
    grad = np.zeros(2)
    for i, (dx, dy) in enumerate(((h, 0.0), (0.0, h))):
        plus = pair_potential(a.moved(dx, dy), shape_a, b, shape_b, cfg)
        minus = pair_potential(a.moved(-dx, -dy), shape_a, b, shape_b, cfg)
        grad[i] = (plus - minus) / (2.0 * h)
    return grad


def safety_force(world: WorldState, a_id, b_id, h: float = 0.25,
                 cfg: FieldConfig | None = None) -> np.ndarray:
    """F_AB = -d(rho_AB)/d(x_A), world frame."""
    a, shape_a = world.actor(a_id)
    b, shape_b = world.actor(b_id)
    return -potential_gradient(a, shape_a, b, shape_b, cfg, h)


def safety_reading(world: WorldState, a_id, b_id, cfg: FieldConfig | None = None) -> SafetyReading:
    cfg = cfg or FieldConfig()
    a, shape_a = world.actor(a_id)
    b, shape_b = world.actor(b_id)
    rho = pair_potential(a, shape_a, b, shape_b, cfg)
    f = safety_force(world, a_id, b_id, cfg.fd_step, cfg) if rho > 0.0 else np.zeros(2)
    return SafetyReading(rho, (float(f[0]), float(f[1])), (a_id, b_id))


# ----------------------------------------------------------------------------
# Non-increase verification


@dataclass
class NonIncreaseReport:
    trace: list
    max_uptick: float
    violations: list
    tolerance: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "rho"])
            for t, rho in self.trace:
                w.writerow([repr(t), repr(rho)])


def verify_nonincrease(pair, duration: float, cfg: FieldConfig | None = None,
                       rel_tol: float = 1e-2, abs_tol: float = 1e-9,
                       controls=None) -> NonIncreaseReport:
    """Drive both actors with their strongest braking policy and watch rho.

    ``pair`` is ((state_a, shape_a), (state_b, shape_b)). ``controls`` may
    override the per-actor ControlInput (to break the theorem's hypothesis).
    """
    cfg = cfg or FieldConfig()
    proc = cfg.procedure
    dt = proc.dt
    strongest = proc.strongest()
    (a, sa), (b, sb) = pair
    default = [ControlInput(-strongest.decel, strongest.steer_hold)] * 2
    ctrl = list(controls) if controls is not None else default
    ctrl = [c if c is not None else default[i] for i, c in enumerate(ctrl)]
    n = max(1, int(round(duration / dt)))
    trace = [(0.0, pair_potential(a, sa, b, sb, cfg))]
    tol = rel_tol * trace[0][1] + abs_tol
    violations = []
    max_up = -math.inf
    for k in range(1, n + 1):
        a = step_kinematics(a, ctrl[0], sa, dt)
        b = step_kinematics(b, ctrl[1], sb, dt)
        t = k * dt
        rho = pair_potential(a, sa, b, sb, cfg)
        delta = rho - trace[-1][1]
        max_up = max(max_up, delta)
        if delta > tol:
            violations.append((t, delta))
        trace.append((t, rho))
    return NonIncreaseReport(trace, max_up if n else 0.0, violations, tol)


def random_pair(rng: np.random.Generator, shapes, max_gap: float = 30.0,
                max_speed: float = 15.0):
    """Random two-actor configuration: A at the origin, B within ``max_gap``."""
    sa = shapes[int(rng.integers(len(shapes)))]
    sb = shapes[int(rng.integers(len(shapes)))]
    a = ActorState(0.0, 0.0, float(rng.uniform(-math.pi, math.pi)),
                   float(rng.uniform(0.0, max_speed)), "A")
    r = float(rng.uniform(3.0, max_gap))
    th = float(rng.uniform(-math.pi, math.pi))
    b = ActorState(r * math.cos(th), r * math.sin(th), float(rng.uniform(-math.pi, math.pi)),
                   float(rng.uniform(0.0, max_speed)), "B")
    return (a, sa), (b, sb)


# ----------------------------------------------------------------------------
# Verification suites (used by the CLI and the acceptance tests)

SUITE_SHAPES = (VehicleShape(4.5, 1.9, 2.7, "sedan"), VehicleShape(4.8, 2.0, 2.9, "suv"),
                VehicleShape(5.2, 2.1, 3.2, "van"), VehicleShape(7.0, 2.4, 4.0, "truck"))


@dataclass
class SuiteReport:
    trials: int
    failures: list
    worst: float

    @property
    def ok(self) -> bool:
        return not self.failures


def nonincrease_suite(trials: int = 200, seed: int = 0, duration: float = 4.0,
                      cfg: FieldConfig | None = None) -> SuiteReport:
    """Random pairs braking with their strongest policy; a failure is any rho uptick."""
    cfg = cfg or FieldConfig()
    rng = np.random.default_rng(seed)
    failures, worst = [], 0.0
    for i in range(trials):
        rep = verify_nonincrease(random_pair(rng, SUITE_SHAPES), duration, cfg)
        worst = max(worst, rep.max_uptick)
        if rep.violations:
            failures.append((i, rep.violations))
    return SuiteReport(trials, failures, worst)


def claimed_overlap_cells(a, shape_a, b, shape_b, proc: SafetyProcedure) -> int:
    """Cells shared by the two binary claimed sets on a window around the pair."""
    from .claimed import claimed_set

    half = proc.reach(max(a.speed, b.speed)) + math.hypot(a.x - b.x, a.y - b.y) + 10.0
    spec = GridSpec.centered(0.5 * (a.x + b.x), 0.5 * (a.y + b.y), 2 * half, 2 * half, 0.5)
    ga = claimed_set(a, shape_a, proc, spec).occupancy
    gb = claimed_set(b, shape_b, proc, spec).occupancy
    return int(np.count_nonzero(ga & gb))


def five_point_gradient(a, shape_a, b, shape_b, cfg: FieldConfig, h: float) -> np.ndarray:
    grad = np.zeros(2)
    for i, (dx, dy) in enumerate(((h, 0.0), (0.0, h))):
        f = [pair_potential(a.moved(m * dx, m * dy), shape_a, b, shape_b, cfg)
             for m in (-2, -1, 1, 2)]
        grad[i] = (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h)
    return grad


def force_suite(trials: int = 100, seed: int = 0, rel_tol: float = 0.1, abs_tol: float = 1e-6,
                cfg: FieldConfig | None = None, max_draws: int = 100000) -> SuiteReport:
    """Compare safety_force against a 5-point stencil on overlapping configurations.

    A configuration counts as overlapping when the two binary claimed sets
    share at least one cell.
    """
    cfg = cfg or FieldConfig()
    rng = np.random.default_rng(seed)
    failures, worst, n = [], 0.0, 0
    for _ in range(max_draws):
        if n >= trials:
            break
        (a, sa), (b, sb) = random_pair(rng, SUITE_SHAPES, max_gap=20.0)
        if claimed_overlap_cells(a, sa, b, sb, cfg.procedure) == 0:
            continue
        world = WorldState(0.0, ((a, sa), (b, sb)))
        force = safety_force(world, "A", "B", cfg.fd_step, cfg)
        ref = -five_point_gradient(a, sa, b, sb, cfg, cfg.fd_step)
        err = float(np.linalg.norm(force - ref))
        rel = err / max(float(np.linalg.norm(ref)), 1e-300)
        worst = max(worst, rel)
        if err > abs_tol and rel > rel_tol:
            failures.append((n, rel))
        n += 1
    if n < trials:
        raise ValidationError(f"only {n} overlapping configurations in {max_draws} draws")
    return SuiteReport(n, failures, worst)
