"""Acceptance criteria. Each test records one PASS/FAIL line, printed in the
terminal summary (and to stdout with ``-s``)."""

import json
import math
import os
import time

import numpy as np
import pytest
import shapely
from shapely.geometry import Polygon
from shapely.ops import unary_union

from conftest import ACCEPTANCE_LINES
from sffsim import cli
from sffsim.claimed import GridSpec, claimed_set, mollifier_kernel, mollify, policy_groups, sweep_hulls
from sffsim.experiment import ExperimentSpec, run_experiment
from sffsim.field import SUITE_SHAPES, random_pair, safety_potential
from sffsim.predictor import (OracleModel, TrainConfig, evaluate_iou, generate_dataset,
                              gradient_check, predict_claimed_set, train)
from sffsim.procedure import default_procedure
from sffsim.world import ActorState, VehicleShape, WorldState

pytestmark = pytest.mark.acceptance


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def test_c1_nonincrease(capsys):
    t0 = time.perf_counter()
    rc = cli.main(["verify-sff", "--trials", "200", "--force-trials", "0", "--seed", "0"])
    elapsed = time.perf_counter() - t0
    out = json.loads(capsys.readouterr().out)
    viol = out["nonincrease"]["violations"]
    ok = rc == 0 and out["nonincrease"]["trials"] == 200 and viol == 0 and elapsed <= 120.0
    report(1, ok, f"200 braking pairs, {viol} violations, max uptick "
                  f"{out['nonincrease']['max_uptick']:.3g}, {elapsed:.1f} s (limit 120 s)")
    assert ok


def test_c2_force_vs_five_point(capsys):
    rc = cli.main(["verify-sff", "--trials", "0", "--force-trials", "100", "--seed", "0"])
    out = json.loads(capsys.readouterr().out)["force"]
    ok = rc == 0 and out["trials"] == 100 and out["failures"] == 0
    report(2, ok, f"100 overlapping configurations, {out['failures']} outside 10% / 1e-6, "
                  f"worst relative error {out['max_rel_error']:.3g}")
    assert ok


def _region(state, shape, proc):
    pts = sweep_hulls(state, shape, policy_groups(shape, proc), proc.horizon, proc.dt)
    return unary_union([Polygon(p).convex_hull for p in pts])


def test_c3_overlap_oracle():
    proc = default_procedure()
    ident = mollifier_kernel(0.5, 0.5, identity=True)
    rng = np.random.default_rng(2024)
    res, worst, n = 0.125, 0.0, 0
    failures = []
    while n < 50:
        (a, sa), (b, sb) = random_pair(rng, SUITE_SHAPES, max_gap=15.0, max_speed=12.0)
        ra, rb = _region(a, sa, proc), _region(b, sb, proc)
        inter = ra.intersection(rb)
        if inter.area < 1.0:
            continue
        n += 1
        half = max(np.abs(np.array(ra.bounds)).max(), np.abs(np.array(rb.bounds)).max()) + 2.0
        spec = GridSpec.centered(0.0, 0.0, 2 * half, 2 * half, 0.5)
        rho = safety_potential(mollify(claimed_set(a, sa, proc, spec), ident),
                               mollify(claimed_set(b, sb, proc, spec), ident))
        # dense point sampling of the true overlap region
        x0, y0, x1, y1 = inter.bounds
        xs = np.arange(x0 + res / 2, x1, res)
        ys = np.arange(y0 + res / 2, y1, res)
        px, py = np.meshgrid(xs, ys)
        inside = shapely.contains_xy(ra, px, py) & shapely.contains_xy(rb, px, py)
        area = float(inside.sum()) * res * res
        tol = 0.5 * inter.length
        worst = max(worst, abs(rho - area) / tol)
        if abs(rho - area) > tol:
            failures.append((n, rho, area, tol))
    ok = not failures
    report(3, ok, f"50 overlapping pairs, identity kernel, {len(failures)} outside "
                  f"cell*perimeter, worst error/tolerance {worst:.3f}")
    assert ok, failures


def test_c4_predictor_quality():
    t0 = time.perf_counter()
    data = generate_dataset(11, seed=0)
    model, log = train(data, TrainConfig())
    elapsed = time.perf_counter() - t0
    rep = evaluate_iou(model, data)
    idx = data.train[:64]
    grad_err = gradient_check(model, data.features[idx], data.labels[idx], n_params=20,
                              step=1e-5)
    ok = (len(data) >= 5000 and rep.mean >= 0.7 and rep.p10 >= 0.5 and grad_err < 1e-4
          and elapsed <= 900.0)
    report(4, ok, f"{len(data)} examples, val IoU mean {rep.mean:.3f} p10 {rep.p10:.3f}, "
                  f"gradient rel error {grad_err:.2e}, data+training {elapsed:.0f} s")
    assert ok


def test_c5_policy_ordering(tmp_path):
    cores = os.cpu_count() or 1
    jobs = min(4, cores)
    spec = ExperimentSpec()
    assert (spec.iterations, spec.scenario.episode_steps, spec.scenario.npc_count) == (10, 2000, 20)
    t0 = time.perf_counter()
    table = run_experiment(spec, tmp_path, jobs=jobs)
    elapsed = time.perf_counter() - t0
    # the budget is stated for four parallel workers; with fewer cores the
    # independent cells run serially, so compare the equivalent 4-worker time
    equivalent = elapsed * jobs / 4.0
    problems = list(table.errors)
    lines = []
    for level in spec.aggressions:
        arr = {p: table.means(level, p)[0] for p in spec.policies}
        afs = {p: table.means(level, p)[1] for p in spec.policies}
        lines.append(f"    {level:>12s}  afs " + " ".join(f"{p}={afs[p]:.1f}" for p in spec.policies)
                     + "  arrivals " + " ".join(f"{p}={arr[p]:.2f}" for p in spec.policies))
        checks = {"(a) sff>=autopilot": afs["sff"] >= afs["autopilot"],
                  "(a) autopilot>=none": afs["autopilot"] >= afs["none"],
                  "(a) rss>=autopilot": afs["rss"] >= afs["autopilot"],
                  "(b) sff>=rss arrivals": arr["sff"] >= arr["rss"],
                  "(b) sff>=none arrivals": arr["sff"] >= arr["none"]}
        problems += [f"{level} {name}" for name, good in checks.items() if not good]
    none_no, none_high = table.means("No", "none")[1], table.means("High", "none")[1]
    if not none_high <= none_no:
        problems.append(f"(c) none afs High {none_high:.1f} > No {none_no:.1f}")
    if equivalent > 1800.0:
        problems.append(f"runtime {equivalent:.0f} s (4-worker equivalent) > 1800 s")
    ok = not problems
    report(5, ok, f"{len(table.raw)} episodes, {elapsed:.0f} s with {jobs} worker(s) "
                  f"({equivalent:.0f} s at 4 workers)" + ("" if ok else "; " + "; ".join(problems)))
    ACCEPTANCE_LINES.extend(lines)
    assert ok, problems


def test_c6_determinism(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scenario": {"npc_count": 20, "episode_steps": 300,
                                            "policy": "sff", "aggression": "High"}}))
    outs = []
    for k in range(2):
        log = tmp_path / f"log{k}.jsonl"
        assert cli.main(["simulate", "--config", str(cfg), "--seed", "11", "--log", str(log)]) == 0
        outs.append(log.read_bytes())
    capsys.readouterr()
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"experiment": {"policies": ["sff", "rss", "autopilot", "none"],
                                               "aggressions": ["No", "High"], "iterations": 2},
                                "scenario": {"npc_count": 10, "episode_steps": 200}}))
    csvs = []
    for k in range(2):
        out = tmp_path / f"res{k}"
        assert cli.main(["experiment", "--spec", str(spec), "--out-dir", str(out)]) == 0
        csvs.append([(out / n).read_bytes() for n in ("results_raw.csv", "results_summary.csv")])
    capsys.readouterr()
    ok = outs[0] == outs[1] and len(outs[0]) > 0 and csvs[0] == csvs[1]
    report(6, ok, f"decision logs identical ({len(outs[0])} bytes), experiment CSVs identical")
    assert ok


def test_c7_pipeline_identity():
    proc = default_procedure()
    oracle = OracleModel(proc)
    rng = np.random.default_rng(77)
    mismatches = 0
    for i in range(100):
        shape = SUITE_SHAPES[int(rng.integers(len(SUITE_SHAPES)))]
        st = ActorState(float(rng.uniform(-100, 100)), float(rng.uniform(-100, 100)),
                        float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(0, 20)), "t")
        world = WorldState(0.0, ((st, shape),))
        half = proc.reach(st.speed) + shape.half_diagonal + 2.0
        spec = GridSpec.centered(st.x, st.y, 2 * half, 2 * half, 0.5)
        if predict_claimed_set(oracle, world, "t", spec, proc) != claimed_set(st, shape, proc, spec):
            mismatches += 1
    report(7, mismatches == 0, f"100 random states, {mismatches} cell mismatches")
    assert mismatches == 0
