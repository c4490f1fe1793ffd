"""Command-line entry point: ``sffsim <subcommand> ...``.

Exit status is 0 on success, 1 on invalid input (including usage errors) and
2 on file-system errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace

from .errors import SffError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _seed(arg, default=None):
    """Explicit flag first, then the SFF_SEED environment variable."""
    if arg is not None:
        return arg
    env = os.environ.get("SFF_SEED")
    return int(env) if env not in (None, "") else default


def _scenario(args):
    from .sim import ScenarioConfig, aggression_table, level_from

    raw = _load_json(args.config) if args.config else {}
    cfg = ScenarioConfig.from_dict(raw)
    kw = {}
    seed = _seed(args.seed)
    if seed is not None:
        kw["seed"] = seed
    if args.policy:
        kw["policy"] = args.policy
    if args.aggression:
        kw["aggression"] = level_from(aggression_table(raw), args.aggression)
    if args.steps:
        kw["episode_steps"] = args.steps
    if args.npcs is not None:
        kw["npc_count"] = args.npcs
    return replace(cfg, **kw)


def cmd_simulate(args):
    from .sim import run_episode

    res = run_episode(_scenario(args), log_path=args.log)
    print(json.dumps(asdict(res), sort_keys=True))
    return EXIT_OK


def cmd_experiment(args):
    from .experiment import ExperimentSpec, run_experiment

    spec = ExperimentSpec.from_dict(_load_json(args.spec)) if args.spec else ExperimentSpec()
    if args.paper_scale:
        spec = spec.paper_scale()
    seed = _seed(None)
    if seed is not None:
        spec = replace(spec, base_seed=seed)
    table = run_experiment(spec, args.out_dir, jobs=args.jobs)
    for agg, pol, n, arr, afs in table.summary():
        print(f"{agg:>12s} {pol:>10s}  n={n:<3d} arrivals={arr:.3f}  accident_free={afs:.1f}")
    for agg, pol, it, err in table.errors:
        print(f"failed: {agg} {pol} iteration {it}: {err}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args):
    from .predictor import (TrainConfig, constant_baseline_loss, evaluate_iou,
                            generate_dataset, train)

    seed = _seed(args.seed, 0)
    data = generate_dataset(args.episodes, seed, steps=args.steps, vehicles=args.vehicles)
    if args.out_dataset:
        data.save(args.out_dataset)
    model, log = train(data, TrainConfig(epochs=args.epochs, seed=seed), args.log)
    model.save(args.out_model)
    rep = evaluate_iou(model, data)
    print(json.dumps({"examples": len(data), "best_val_loss": min(r[2] for r in log),
                      "baseline_loss": constant_baseline_loss(data), "mean_iou": rep.mean,
                      "p10_iou": rep.p10}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args):
    from .predictor import Dataset, evaluate_iou, generate_dataset, load_model

    model = load_model(args.model)
    if args.dataset:
        data = Dataset.load(args.dataset)
    else:
        data = generate_dataset(args.episodes, _seed(args.seed, 1))
    rep = evaluate_iou(model, data)
    print(json.dumps({"examples": len(rep.values), "mean_iou": rep.mean, "p10_iou": rep.p10},
                     sort_keys=True))
    return EXIT_OK


def cmd_verify(args):
    from .field import force_suite, nonincrease_suite

    seed = _seed(args.seed, 0)
    ni = nonincrease_suite(args.trials, seed)
    fs = force_suite(args.force_trials, seed)
    print(json.dumps({"nonincrease": {"trials": ni.trials, "violations": len(ni.failures),
                                      "max_uptick": ni.worst},
                      "force": {"trials": fs.trials, "failures": len(fs.failures),
                                "max_rel_error": fs.worst}}, sort_keys=True))
    return EXIT_OK if ni.ok and fs.ok else EXIT_INVALID


def cmd_render(args):
    from .claimed import GridSpec, claimed_set, mollifier_kernel, mollify
    from .field import FieldConfig
    from .render import fields_from_json, load_snapshot, render_frame

    world = load_snapshot(args.snapshot)
    if args.fields:
        fields = fields_from_json(_load_json(args.fields))
    else:
        cfg = FieldConfig()
        k = mollifier_kernel(cfg.kernel_radius, cfg.cell)
        fields = []
        for st, sh in world.actors:
            if st.actor_id == args.ego:
                continue
            half = cfg.envelope_radius(st, sh) + 1.0
            spec = GridSpec.centered(st.x, st.y, 2 * half, 2 * half, cfg.cell)
            fields.append(mollify(claimed_set(st, sh, cfg.procedure, spec), k))
    render_frame(world, fields, args.out, args.ego)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sffsim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("simulate", help="run one episode, print the result as JSON")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--policy")
    s.add_argument("--aggression")
    s.add_argument("--steps", type=int)
    s.add_argument("--npcs", type=int)
    s.add_argument("--log", help="JSONL decision log path")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("experiment", help="policy x aggression grid, writes CSVs")
    s.add_argument("--spec")
    s.add_argument("--out-dir", default="results")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--paper-scale", action="store_true")
    s.set_defaults(fn=cmd_experiment)

    s = sub.add_parser("train-predictor", help="generate data and train the predictor")
    s.add_argument("--episodes", type=int, default=11)
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--vehicles", type=int, default=10)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--seed", type=int)
    s.add_argument("--out-model", default="predictor.json")
    s.add_argument("--out-dataset")
    s.add_argument("--log", help="training log CSV path")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval-predictor", help="claimed-set IoU on a validation split")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset")
    s.add_argument("--episodes", type=int, default=2)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("verify-sff", help="non-increase and force/gradient checks")
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--force-trials", type=int, default=100)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("render", help="draw a world snapshot and claimed-set fields as SVG")
    s.add_argument("--snapshot", required=True)
    s.add_argument("--fields")
    s.add_argument("--out", required=True)
    s.add_argument("--ego", default="ego")
    s.set_defaults(fn=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except OSError as exc:
        print(f"sffsim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SffError, ValueError, KeyError, TypeError) as exc:
        print(f"sffsim: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
