"""Command-line entry point.

Subcommands: ``centrality``, ``curriculum``, ``percolation``, ``simulate``.
Every command writes JSON (to ``--output`` atomically, or stdout).

Exit codes: 0 success, 2 input or usage error, 3 numerical degeneracy.
``CC_THREADS`` caps the BLAS thread pool.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .centrality import CentralityRanking, StationaryCentrality
from .curriculum import ActiveSetConfig, build_schedule, run_active_set, run_normal
from .exceptions import (
    ConvergenceError,
    DegenerateInputError,
    InvalidInputError,
    InvalidParameterError,
    TrainerError,
)
from .features import atomic_write_text, load_features
from .geometry import PercolationAnalysis
from .simulation import (
    FrechetScore,
    GaussianTrainer,
    GMMTrainer,
    load_spec_file,
    tomllib,
    vshape_experiment,
)

EXIT_USAGE = 2
EXIT_NUMERIC = 3

_CURRICULUM_KEYS = {"base_size", "increment", "active_size", "seed", "trainer", "metric",
                    "mode", "reference", "n_components", "ridge"}
_PIPELINE_KEYS = {"base_size", "increment", "active_size", "reference_size", "seeds",
                  "trainer", "n_neighbors", "target_geomean"}


class UsageError(Exception):
    pass


def _emit(payload, output):
    text = json.dumps(payload, indent=1) + "\n"
    if output:
        atomic_write_text(output, text)
    else:
        sys.stdout.write(text)


def _load_config(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InvalidInputError(f"{path}: cannot open ({exc.strerror})") from None
    try:
        data = json.loads(raw) if path.suffix == ".json" else tomllib.loads(raw.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    unknown = set(data) - _CURRICULUM_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
    return data


def _make_trainer(name, n_components=2, ridge=1e-6):
    if name == "gaussian":
        return GaussianTrainer(ridge=ridge)
    if name == "gmm":
        return GMMTrainer(n_components=n_components, ridge=ridge)
    raise UsageError(f"unknown trainer {name!r} (expected 'gaussian' or 'gmm')")


def cmd_centrality(args):
    features = load_features(args.input, args.format)
    if args.neighbors is not None and args.neighbors < 1:
        raise UsageError("--neighbors must be positive")
    est = StationaryCentrality(n_neighbors=args.neighbors, target_geomean=args.target_geomean,
                               tol=args.tol, max_iter=args.max_iters)
    est.fit(features)
    if args.dump_graph:
        atomic_write_text(args.dump_graph,
                          json.dumps(est.graph_.to_dict(args.target_geomean)) + "\n")
    _emit(est.ranking_.to_records(), args.output)
    print(f"centrality: m={features.m} K={est.n_neighbors_} sigma={est.sigma_:.6g} "
          f"residual={est.ranking_.residual:.3e} ({est.ranking_.variant})", file=sys.stderr)


def cmd_curriculum(args):
    cfg = _load_config(args.config) if args.config else {}

    def pick(flag, key, default=None):
        value = getattr(args, flag)
        return value if value is not None else cfg.get(key, default)

    base = pick("base", "base_size")
    increment = pick("increment", "increment")
    mode = pick("mode", "mode", "normal")
    active_size = pick("active_size", "active_size")
    seed = pick("seed", "seed", 0)
    trainer_name = pick("trainer", "trainer", "gaussian")
    metric = pick("metric", "metric", "frechet")
    reference = pick("reference", "reference")
    ridge = pick("ridge", "ridge", 1e-6)
    n_components = pick("n_components", "n_components", 2)

    if base is None or increment is None:
        raise UsageError("--base and --increment are required (flag or config)")
    if mode not in ("normal", "active"):
        raise UsageError(f"unknown mode {mode!r} (expected 'normal' or 'active')")
    if mode == "active" and active_size is None:
        raise UsageError("--mode active requires --active-size")
    if metric != "frechet":
        raise UsageError(f"unknown metric {metric!r} (only 'frechet' is available)")
    if reference is None:
        raise UsageError("--reference (clean reference features) is required for scoring")
    trainer = _make_trainer(trainer_name, n_components, ridge)

    features = load_features(args.features, args.format)
    try:
        records = json.loads(Path(args.ranking).read_text())
    except OSError as exc:
        raise InvalidInputError(f"{args.ranking}: cannot open ({exc.strerror})") from None
    except ValueError as exc:
        raise InvalidInputError(f"{args.ranking}: {exc}") from None
    if not isinstance(records, list):
        raise InvalidInputError(f"{args.ranking}: expected a JSON array of records")
    ranking = CentralityRanking.from_records(records)
    if len(ranking.ids) != features.m or set(ranking.ids.tolist()) != set(features.ids.tolist()):
        raise InvalidInputError("ranking ids do not match the feature ids")
    ref = load_features(reference)
    if ref.d != features.d:
        raise InvalidInputError(
            f"reference has {ref.d} features, training data has {features.d}")

    schedule = build_schedule(ranking, base, increment)
    score = FrechetScore(ref.points, ridge=ridge)
    if mode == "normal":
        curve = run_normal(schedule, features, trainer, score, seed)
    else:
        config = ActiveSetConfig(active_size, seed)
        curve = run_active_set(schedule, config, features, trainer, score, seed)
    _emit({"schedule": schedule.to_dict(), "curve": curve.to_dict()}, args.output)
    i = curve.optimal_index
    print(f"optimal stage {i} (cumulative size {curve.cumulative_sizes[i]}, "
          f"score {curve.scores[i]:.6g})", file=sys.stderr)


def cmd_percolation(args):
    features = load_features(args.input, args.format)
    if args.grid_size < 3:
        raise UsageError("--grid-size must be at least 3")
    est = PercolationAnalysis(grid_size=args.grid_size, ridge=args.ridge).fit(features)
    _emit(est.curve_.to_dict(), args.output)
    print(f"critical chi {est.critical_chi_:.6g} at index {est.curve_.critical_index} "
          f"(chi_alpha1 {est.curve_.chi_alpha1:.6g})", file=sys.stderr)


def cmd_simulate(args):
    spec, pipeline = load_spec_file(args.spec)
    unknown = set(pipeline) - _PIPELINE_KEYS
    if unknown:
        raise UsageError(f"unknown pipeline keys {sorted(unknown)}")

    def pick(flag, key, default=None):
        value = getattr(args, flag)
        return value if value is not None else pipeline.get(key, default)

    if args.seeds is not None:
        seeds = args.seeds
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = pipeline.get("seeds", [spec.seed])
    if not seeds:
        raise UsageError("no seeds given")
    base = pick("base", "base_size")
    increment = pick("increment", "increment")
    if base is None or increment is None:
        raise UsageError("--base and --increment are required (flag or [pipeline])")
    trainer = _make_trainer(pick("trainer", "trainer", "gaussian"))
    summary = vshape_experiment(
        spec, base, increment, seeds,
        reference_size=pick("reference_size", "reference_size", 2000),
        active_size=pick("active_size", "active_size"),
        trainer=trainer,
        n_neighbors=pipeline.get("n_neighbors"),
        target_geomean=pipeline.get("target_geomean", 0.8),
    )
    _emit(summary.to_dict(), args.output)
    print(f"fraction V-shaped {summary.fraction_v_shaped:.3f}, "
          f"monotone {summary.fraction_monotone:.3f} over {len(seeds)} seeds", file=sys.stderr)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--output", "-o", default=None, help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "bin"), default=None,
                        help="feature file format (default: sniff the magic)")

    parser = argparse.ArgumentParser(
        prog="cluster-curriculum",
        description="Cluster-curriculum learning: centrality, curricula, percolation geometry.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("centrality", parents=[common],
                       help="stationary centrality ranking of a feature file")
    p.add_argument("input")
    p.add_argument("--neighbors", "-k", type=int, default=None, help="K (default round(4 ln m))")
    p.add_argument("--target-geomean", type=float, default=0.8)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--dump-graph", default=None, help="also write the kNN digraph as JSON")
    p.set_defaults(func=cmd_centrality)

    p = sub.add_parser("curriculum", parents=[common],
                       help="build a schedule and run a curriculum sweep")
    p.add_argument("--features", required=True)
    p.add_argument("--ranking", required=True, help="JSON from the centrality command")
    p.add_argument("--reference", default=None, help="clean reference features for scoring")
    p.add_argument("--config", default=None, help="TOML/JSON run config")
    p.add_argument("--base", type=int, default=None)
    p.add_argument("--increment", type=int, default=None)
    p.add_argument("--mode", choices=("normal", "active"), default=None)
    p.add_argument("--active-size", type=int, default=None)
    p.add_argument("--trainer", choices=("gaussian", "gmm"), default=None)
    p.add_argument("--n-components", type=int, default=None)
    p.add_argument("--metric", default=None)
    p.add_argument("--ridge", type=float, default=None)
    p.set_defaults(func=cmd_curriculum)

    p = sub.add_parser("percolation", parents=[common],
                       help="annulus percolation curve and critical point")
    p.add_argument("input")
    p.add_argument("--grid-size", type=int, default=200)
    p.add_argument("--ridge", type=float, default=0.0)
    p.set_defaults(func=cmd_percolation)

    p = sub.add_parser("simulate", parents=[common],
                       help="synthetic V-shape experiment from a spec file")
    p.add_argument("spec", help="TOML/JSON spec path, or a bundled name: noisy, clean")
    p.add_argument("--seeds", type=int, nargs="*", default=None)
    p.add_argument("--base", type=int, default=None)
    p.add_argument("--increment", type=int, default=None)
    p.add_argument("--active-size", type=int, default=None)
    p.add_argument("--reference-size", type=int, default=None)
    p.add_argument("--trainer", choices=("gaussian", "gmm"), default=None)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = os.environ.get("CC_THREADS")
    try:
        limit = int(threads) if threads else None
    except ValueError:
        print(f"error: CC_THREADS={threads!r} is not an integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=limit):
            args.func(args)
    except (UsageError, InvalidInputError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateInputError, ConvergenceError, TrainerError) as exc:
        dims = getattr(exc, "null_dims", None)
        extra = f" [null-space dimensions: {dims}]" if dims is not None else ""
        print(f"error: {exc}{extra}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
