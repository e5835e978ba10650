"""Command line front end.

Subcommands: run (execute a config), compare (tabulate summaries),
validate (check a config), gen-trace (emit a synthetic mobility trace).
Exit codes: 0 success, 2 config or input error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .runner import (ConfigError, comparison_table, load_plan,
                     run_experiment)
from .scenario import gen_synthetic_trace, save_trace


def build_parser():
    parser = argparse.ArgumentParser(
        prog="metaho",
        description="Joint traditional/conditional handover simulator "
                    "with an online meta-learning controller.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a run config")
    run_p.add_argument("--config", required=True, help="run config JSON")
    run_p.add_argument("--out", default=None,
                       help="output directory (overrides the config)")
    run_p.add_argument("--seeds", default=None,
                       help="comma-separated seeds (overrides the config)")
    run_p.add_argument("--parallel", type=int, default=1,
                       help="worker processes across seeds")
    run_p.add_argument("--dump-learner", action="store_true",
                       help="also write per-slot learner internals")

    cmp_p = sub.add_parser("compare",
                           help="tabulate two or more summary JSON files")
    cmp_p.add_argument("summaries", nargs="+", help="summary JSON paths")

    val_p = sub.add_parser("validate", help="check a run config and exit")
    val_p.add_argument("--config", required=True)

    gen_p = sub.add_parser("gen-trace",
                           help="emit a synthetic mobility trace CSV")
    gen_p.add_argument("--out", required=True, help="destination CSV path")
    gen_p.add_argument("--cells", type=int, default=5)
    gen_p.add_argument("--records", type=int, default=400)
    gen_p.add_argument("--area", type=float, default=2000.0,
                       help="square side length in meters")
    gen_p.add_argument("--seed", type=int, default=0)
    return parser


def _parse_seeds(text):
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds must be comma-separated ints: {exc}")
    if not seeds or any(s < 0 for s in seeds) or len(set(seeds)) != len(seeds):
        raise ConfigError("--seeds must be distinct ints >= 0")
    return seeds


def _cmd_run(args):
    plan = load_plan(args.config)
    seeds = _parse_seeds(args.seeds) if args.seeds is not None else None
    summaries = run_experiment(plan, out_dir=args.out, seeds=seeds,
                               parallel=args.parallel,
                               dump_learner=args.dump_learner)
    out = args.out if args.out is not None else plan.output_dir
    for s in summaries:
        print(f"{s['policy']} seed {s['seed']}: "
              f"objective {s['total_objective']:.6f}")
    print(f"wrote {len(summaries)} run(s) to {out}")


def _cmd_compare(args):
    summaries = []
    for path in args.summaries:
        try:
            with open(path) as fh:
                summaries.append(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read summary {path}: {exc}")
    sys.stdout.write(comparison_table(summaries))


def _cmd_validate(args):
    plan = load_plan(args.config)
    print(f"ok: {len(plan.policies)} policies, {len(plan.seeds)} seeds, "
          f"horizon {plan.network.horizon}")


def _cmd_gen_trace(args):
    trace = gen_synthetic_trace(args.cells, args.records, area_m=args.area,
                                rng=np.random.default_rng(args.seed))
    save_trace(trace, args.out)
    print(f"wrote {args.records} records x {args.cells} cells to {args.out}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "compare": _cmd_compare,
                "validate": _cmd_validate, "gen-trace": _cmd_gen_trace}
    try:
        handlers[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
