"""Policy x aggression benchmark grid and its CSV outputs."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

from .errors import ValidationError
from .sim import ScenarioConfig, aggression_table, level_from, run_episode

DEFAULT_POLICIES = ("sff", "rss", "autopilot", "none")
DEFAULT_LEVELS = ("No", "Low", "Intermediate", "High")

RAW_FIELDS = ("aggression", "policy", "iteration", "arrivals", "accident_free_steps")
SUMMARY_FIELDS = ("aggression", "policy", "iterations", "mean_arrivals",
                  "mean_accident_free_steps")


def desk_scenario() -> ScenarioConfig:
    return ScenarioConfig(npc_count=20, episode_steps=2000)


@dataclass(frozen=True)
class ExperimentSpec:
    policies: tuple = DEFAULT_POLICIES
    aggressions: tuple = DEFAULT_LEVELS
    iterations: int = 10
    base_seed: int = 0
    scenario: ScenarioConfig = field(default_factory=desk_scenario)
    levels: dict = field(default_factory=aggression_table, compare=False)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not self.policies or not self.aggressions:
            raise ValidationError("need at least one policy and one aggression level")
        for name in self.aggressions:
            level_from(self.levels, name)

    def paper_scale(self) -> "ExperimentSpec":
        return replace(self, iterations=50,
                       scenario=replace(self.scenario, npc_count=50, episode_steps=5000))

    def cells(self) -> list:
        """(aggression, policy, iteration, config) in output order."""
        out = []
        for agg in self.aggressions:
            level = level_from(self.levels, agg)
            for pol in self.policies:
                for it in range(self.iterations):
                    cfg = replace(self.scenario, aggression=level, policy=pol,
                                  seed=self.base_seed + it)
                    out.append((level.name, pol, it, cfg))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        """Read the ``experiment`` section; the other sections configure each episode."""
        ex = d.get("experiment", {})
        base = {k: v for k, v in d.items() if k != "experiment"}
        scenario = ScenarioConfig.from_dict(base)
        sc = base.get("scenario", {})
        if "npc_count" not in sc:
            scenario = replace(scenario, npc_count=20)
        if "episode_steps" not in sc:
            scenario = replace(scenario, episode_steps=2000)
        return cls(tuple(ex.get("policies", DEFAULT_POLICIES)),
                   tuple(ex.get("aggressions", DEFAULT_LEVELS)),
                   int(ex.get("iterations", 10)), int(ex.get("base_seed", 0)),
                   scenario, aggression_table(base))


@dataclass(frozen=True)
class RawResult:
    aggression: str
    policy: str
    iteration: int
    arrivals: int
    accident_free_steps: int


@dataclass
class ResultsTable:
    raw: list
    errors: list = field(default_factory=list)

    def cell(self, aggression: str, policy: str) -> list:
        return [r for r in self.raw
                if r.aggression.lower() == aggression.lower() and r.policy == policy]

    def means(self, aggression: str, policy: str) -> tuple:
        rows = self.cell(aggression, policy)
        if not rows:
            raise ValidationError(f"no results for ({aggression}, {policy})")
        n = len(rows)
        return (sum(r.arrivals for r in rows) / n, sum(r.accident_free_steps for r in rows) / n)

    def summary(self) -> list:
        keys = []
        for r in self.raw:
            if (r.aggression, r.policy) not in keys:
                keys.append((r.aggression, r.policy))
        out = []
        for agg, pol in keys:
            arr, afs = self.means(agg, pol)
            out.append((agg, pol, len(self.cell(agg, pol)), arr, afs))
        return out

    def write(self, out_dir) -> tuple:
        os.makedirs(out_dir, exist_ok=True)
        raw_path = os.path.join(out_dir, "results_raw.csv")
        summary_path = os.path.join(out_dir, "results_summary.csv")
        with open(raw_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RAW_FIELDS)
            for r in self.raw:
                w.writerow([r.aggression, r.policy, r.iteration, r.arrivals,
                            r.accident_free_steps])
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_FIELDS)
            for agg, pol, n, arr, afs in self.summary():
                w.writerow([agg, pol, n, repr(arr), repr(afs)])
        if self.errors:
            with open(os.path.join(out_dir, "results_errors.csv"), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("aggression", "policy", "iteration", "error"))
                w.writerows(self.errors)
        return raw_path, summary_path


def _run_cell(cfg: ScenarioConfig):
    try:
        r = run_episode(cfg)
        return r.arrivals, r.accident_free_steps, None
    except Exception as exc:  # recorded per cell so the grid keeps going
        return None, None, f"{type(exc).__name__}: {exc}"


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1) -> ResultsTable:
    cells = spec.cells()
    configs = [c[3] for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, configs, chunksize=1))
    else:
        outcomes = [_run_cell(c) for c in configs]
    table = ResultsTable([])
    for (agg, pol, it, _), (arr, afs, err) in zip(cells, outcomes):
        if err is None:
            table.raw.append(RawResult(agg, pol, it, arr, afs))
        else:
            table.errors.append((agg, pol, it, err))
    if out_dir is not None:
        table.write(out_dir)
    return table
