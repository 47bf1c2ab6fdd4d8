"""Command-line interface: generate | select | eval | sweep | validate.

Exit codes: 0 success, 2 usage/configuration error, 3 data/validation
error, 4 numerical failure.  The environment variable MAPSELECT_THREADS
caps sweep worker count.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import greedy as greedy_mod
from . import mapfile, simeval
from .errors import (
    ConfigurationError,
    DataError,
    MapSelectError,
    NumericalError,
    UsageError,
)
from .map_model import SelectionProblem, forced_set, validate
from .simeval import WorldSpec, parse_budget
from .utilities import DEFAULT_B_COVER, UTILITY_KINDS, make_state

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _add_world_args(p):
    p.add_argument("--shape", default="loop", choices=simeval.WORLD_SHAPES)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--points-per-region", type=int, default=50)
    p.add_argument("--radius", type=float, default=12.0)
    p.add_argument("--loop-fraction", type=float, default=0.2)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--mono-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)


def _world_spec(args) -> WorldSpec:
    return WorldSpec(
        shape=args.shape,
        n_frames=args.frames,
        points_per_region=args.points_per_region,
        radius=args.radius,
        loop_fraction=args.loop_fraction,
        sigma=args.sigma,
        mono_fraction=args.mono_fraction,
        seed=args.seed,
    )


def cmd_generate(args) -> int:
    world, gt = simeval.generate_world(_world_spec(args))
    mapfile.save_map(args.output, world, ground_truth=list(gt.poses))
    print(
        "wrote %s: %d frames, %d points, %d observations"
        % (args.output, world.n_frames, world.n_points, len(world.observations))
    )
    return EXIT_OK


def _load_problem(args, world):
    budget = parse_budget(args.budget, world.n_points)
    forced = frozenset() if args.no_forced else frozenset(forced_set(world))
    budget = max(budget, len(forced))
    return SelectionProblem(
        world,
        budget,
        forced=forced,
        prior_epsilon=args.prior_epsilon,
        noise_scale=args.noise_scale,
        cache_contributions=not args.no_cache,
    )


def cmd_select(args) -> int:
    world, _ = mapfile.load_map(args.map)
    problem = _load_problem(args, world)
    selection = simeval.select_subset(
        problem,
        args.utility,
        b_cover=args.b_cover,
        method=args.method,
        epsilon=args.epsilon,
        seed=args.seed,
    )
    mapfile.save_selection(args.output, selection)
    print(
        "selected %d / %d points (utility=%s, value=%.6g, %.3fs, %d gain evals)"
        % (
            selection.k,
            world.n_points,
            args.utility,
            selection.value,
            selection.seconds,
            selection.gain_evals,
        )
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    world, gt_poses = mapfile.load_map(args.map)
    if gt_poses is None:
        raise DataError("map file carries no ground-truth trajectory")
    gt = simeval.GroundTruth(tuple(gt_poses), np.zeros((0, 3)))

    if args.baseline:
        if args.baseline == "full":
            ids = [int(p) for p in world.tables.point_ids]
        elif args.baseline == "empty":
            ids = []
        else:  # random
            n = world.n_points
            k = parse_budget(args.budget, n) if args.budget else max(1, n // 10)
            rng = np.random.default_rng(args.seed)
            ids = sorted(int(p) for p in rng.choice(world.tables.point_ids, size=k, replace=False))
        kind = "baseline-%s" % args.baseline
        selection = greedy_mod.Selection(ids, [], float("nan"), 0, 0.0, "baseline", kind)
    else:
        if not args.selection:
            raise UsageError("pass a selection file or --baseline")
        ids, meta = mapfile.load_selection(args.selection)
        unknown = [p for p in ids if p not in world.tables.point_index]
        if unknown:
            raise DataError("selection references unknown points %s" % unknown[:10])
        selection = greedy_mod.Selection(
            ids,
            [],
            float(meta.get("value", "nan")),
            int(meta.get("gain_evals", 0)),
            float(meta.get("seconds", 0.0)),
            meta.get("method", "unknown"),
            meta.get("kind", "unknown"),
        )

    if selection.ids:
        report = simeval.evaluate_selection(
            world, gt, selection, threshold=args.threshold, max_iters=args.max_iters
        )
    else:
        # nothing to adjust: score the stored trajectory directly
        poses = [world.frame_by_index(j).pose for j in range(1, world.n_frames + 1)]
        report = simeval.EvalReport(
            kind=selection.kind,
            budget=0,
            seed=args.seed,
            ape_m=simeval.ape(poses, list(gt.poses)),
            rpe_rmse=simeval.rpe(poses, list(gt.poses), 1),
            recall=simeval.recall_proxy(world, set(), args.threshold),
            utility=float("nan"),
            select_seconds=0.0,
            gain_evals=0,
        )
    report.seed = args.seed
    print("ape_m=%.9g rpe_rmse=%.9g recall_proxy=%.9g" % (report.ape_m, report.rpe_rmse, report.recall))
    print(simeval.CSV_HEADER)
    print(simeval.report_csv_row(report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = _world_spec(args)
    kinds = args.kinds.split(",")
    for kind in kinds:
        if kind not in UTILITY_KINDS + ("random",):
            raise UsageError("unknown utility kind %r" % (kind,))
    budgets = args.budgets.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    reports = simeval.budget_sweep(
        spec,
        kinds,
        budgets,
        seeds,
        b_cover=args.b_cover,
        threshold=args.threshold,
        method=args.method,
        use_forced=not args.no_forced,
    )
    lines = [simeval.CSV_HEADER] + [simeval.report_csv_row(r) for r in reports]
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    world, _ = mapfile.load_map(args.map, check=False)
    diags = validate(world)
    if diags:
        for d in diags:
            print(d)
        return EXIT_DATA
    print(
        "ok: %d frames, %d points, %d observations"
        % (world.n_frames, world.n_points, len(world.observations))
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mapselect", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic map file")
    _add_world_args(g)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("select", help="select a point subset from a map file")
    s.add_argument("map")
    s.add_argument("--utility", required=True, choices=UTILITY_KINDS + ("random",))
    s.add_argument("--budget", required=True, help="absolute count or percentage like 15%%")
    s.add_argument("--method", default="lazy", choices=("lazy", "classic", "stochastic"))
    s.add_argument("--epsilon", type=float, default=0.05)
    s.add_argument("--b-cover", type=int, default=DEFAULT_B_COVER)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--prior-epsilon", type=float, default=1e-4)
    s.add_argument("--noise-scale", type=float, default=1.0)
    s.add_argument("--no-cache", action="store_true")
    s.add_argument("--no-forced", action="store_true", help="skip the last-keyframe forced set")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_select)

    e = sub.add_parser("eval", help="bundle-adjust a selection and report errors")
    e.add_argument("map")
    e.add_argument("selection", nargs="?")
    e.add_argument("--baseline", choices=("full", "empty", "random"))
    e.add_argument("--budget", default=None, help="budget for --baseline random")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threshold", type=int, default=simeval.RECALL_THRESHOLD)
    e.add_argument("--max-iters", type=int, default=50)
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="run a (kind, budget, seed) sweep, emit CSV")
    _add_world_args(w)
    w.add_argument("--kinds", default="odom,cover")
    w.add_argument("--budgets", default="10%,20%,30%")
    w.add_argument("--seeds", default="0,1,2")
    w.add_argument("--b-cover", type=int, default=DEFAULT_B_COVER)
    w.add_argument("--threshold", type=int, default=simeval.RECALL_THRESHOLD)
    w.add_argument("--method", default="lazy", choices=("lazy", "classic", "stochastic"))
    w.add_argument("--no-forced", action="store_true")
    w.add_argument("-o", "--output", default=None)
    w.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a map file's invariants")
    v.add_argument("map")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print("usage error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print("numerical error: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL
    except MapSelectError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print("io error: %s" % exc, file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
