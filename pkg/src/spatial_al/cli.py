"""Command-line entry point: ``select``, ``simulate``, ``validate-metric`` and ``bench``.

Exit status is 0 on success, 1 for data or runtime errors (a JSON object is
written to stderr) and 2 for usage errors.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

from . import bench, io, kernels
from .diversity import LINEAR, PIECEWISE, validate_metric
from .errors import FormatError, PoolExhaustedError
from .features import fit_pca, pca_project
from .regions import commit_batch
from .scoring import score_pool
from .selection import MAX_MIN, MAX_SUM, PRESETS, greedy_select, preset
from .sim import DOMINANT, IMBALANCED, LoopConfig, SyntheticDatasetSpec, generate_synthetic_dataset, run_al_loop


def _add_selection_flags(p, method_default="EntropySpatial"):
    g = p.add_argument_group("selection")
    g.add_argument("--method", default=None,
                   help=f"preset name ({', '.join(PRESETS)}); default {method_default}")
    g.add_argument("--lambda-u", type=float)
    g.add_argument("--lambda-f", type=float)
    g.add_argument("--lambda-s", type=float)
    g.add_argument("--dist", choices=(PIECEWISE, LINEAR), help="spatial distance form")
    g.add_argument("--a", type=float)
    g.add_argument("--b", type=float)
    g.add_argument("--c", type=float)
    g.add_argument("--tau", type=float, help="near/far threshold in pixels (default: region size)")
    g.add_argument("--p-norm", choices=("1", "2", "inf"))
    g.add_argument("--batch-size", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--region-size", type=int)
    g.add_argument("--objective", choices=(MAX_MIN, MAX_SUM))


def _distance_overrides(args):
    out = {}
    for flag, key in (("dist", "spatial_form"), ("a", "a"), ("b", "b"), ("c", "c"),
                      ("tau", "tau"), ("p_norm", "p_norm"), ("lambda_f", "lambda_f"),
                      ("lambda_s", "lambda_s")):
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    return out


def _selection_config(args, run_cfg: io.RunConfig):
    """Preset (or config-file selection) with command-line overrides on top."""
    region_size = args.region_size or run_cfg.region_size
    base = run_cfg.selection
    overrides = _distance_overrides(args)
    if args.method or base.method_name is None:
        cfg = preset(args.method or base.method_name or "EntropySpatial",
                     batch_size=base.batch_size, seed=base.seed, region_size=region_size,
                     **overrides)
    else:
        cfg = replace(base, distance=replace(base.distance, **overrides))
    updates = {}
    if args.lambda_u is not None:
        updates["lambda_u"] = args.lambda_u
    if args.batch_size is not None:
        updates["batch_size"] = args.batch_size
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.objective is not None:
        updates["objective"] = args.objective
    return replace(cfg, **updates) if updates else cfg


def cmd_select(args):
    run_cfg = io.load_run_config(args.config) if args.config else io.RunConfig()
    pool_path = args.pool or run_cfg.pool
    index_path = args.posteriors or run_cfg.posterior_index
    features_path = args.features or run_cfg.features
    output = args.output or run_cfg.output
    if not pool_path or not index_path or not output:
        raise _Usage("select needs --pool, --posteriors and --output (or a --config providing them)")

    state = io.load_pool(pool_path)
    if args.region_size and args.region_size != state.grid.region_size:
        raise FormatError("region_size_mismatch",
                          f"pool uses region size {state.grid.region_size}, flag says {args.region_size}")
    if args.region_size is None:
        args.region_size = state.grid.region_size
    files = io.read_index(index_path)
    posteriors = {i: io.read_posterior_file(p, i) for i, p in files.items()}
    scores = score_pool(posteriors, state.grid)
    config = _selection_config(args, run_cfg)

    features = None
    if features_path and config.distance.lambda_f > 0:
        features = io.read_region_features(features_path, state.grid)
        if args.pca_dim:
            features = pca_project(fit_pca(features, args.pca_dim), features)

    result = greedy_select(state, scores, features, config)
    io.write_selection_manifest(result, output, batch_index=state.iteration)
    if args.pool_out:
        new_state = state.with_batch(result.batch)
        if args.commit:
            new_state = commit_batch(new_state)
        io.save_pool(args.pool_out, new_state)
    summary = {
        "method": result.method,
        "objective": result.objective,
        "picks": len(result),
        "wall_time": round(result.wall_time, 6),
        "distance_evals": result.distance_evals,
        "flags": result.flags,
        "manifest": str(output),
    }
    print(json.dumps(summary))
    return 0


def cmd_simulate(args):
    if any(getattr(args, k) is not None for k in ("lambda_u", "lambda_f", "lambda_s", "batch_size")):
        raise _Usage("simulate takes weights from --method and sizes from --base")
    spec = SyntheticDatasetSpec(
        num_train_images=args.train_images,
        num_eval_images=args.eval_images,
        image_size=tuple(args.image_size),
        num_classes=args.classes,
        class_layout=args.layout,
        feature_dim=args.feature_dim,
        noise_sigma=args.noise,
        seed=args.seed if args.seed is not None else 0,
    )
    loop = LoopConfig(
        iterations=args.iterations,
        base=args.base,
        region_size=args.region_size or 8,
        seed=spec.seed,
        temperature=args.temperature,
        feature_pca_dim=args.pca_dim,
        spatial_form=args.dist,
        objective=args.objective or MAX_MIN,
        tau=args.tau,
        a=args.a,
        b=args.b,
        c=args.c,
        p_norm=args.p_norm,
    )
    history = run_al_loop(generate_synthetic_dataset(spec), args.method or "EntropySpatial", loop)
    text = history.to_csv() if args.format == "csv" else history.to_json() + "\n"
    if args.output:
        io.atomic_write(args.output, text, mode="w")
    else:
        sys.stdout.write(text)
    return 0


def cmd_validate_metric(args):
    p = math.inf if args.p_norm == "inf" else int(args.p_norm)
    tau = args.tau if args.tau is not None else float(args.region_size)
    report = validate_metric(args.a, args.b, args.c, tau=tau, p_norm=p,
                             region_size=args.region_size, trials=args.trials, seed=args.seed)
    print(json.dumps(report, indent=2))
    return 0


def cmd_bench(args):
    backend = kernels.get_backend(args.backend)
    rows = bench.run_bench(
        n_regions=args.n_regions,
        budgets=args.budgets,
        methods=args.methods,
        feature_dim=args.feature_dim,
        labeled=args.labeled,
        repeats=args.repeats,
        seed=args.seed,
        backend=backend,
        log=(lambda s: print(s, file=sys.stderr)) if args.verbose else None,
    )
    text = bench.rows_to_csv(rows)
    if args.output:
        io.atomic_write(args.output, text, mode="w")
    else:
        sys.stdout.write(text)
    return 0


class _Usage(Exception):
    pass


def build_parser():
    parser = argparse.ArgumentParser(prog="spatial-al", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="pick the next batch of regions")
    p.add_argument("--config", help="run config JSON (flags override it)")
    p.add_argument("--pool", help="pool state JSON")
    p.add_argument("--posteriors", help="posterior index JSON")
    p.add_argument("--features", help="region feature file (RALF)")
    p.add_argument("--pca-dim", type=int, help="project region features to this many components")
    p.add_argument("--output", help="selection manifest (JSON Lines)")
    p.add_argument("--pool-out", help="write the pool state with the new batch")
    p.add_argument("--commit", action="store_true", help="with --pool-out, move the batch to labeled")
    _add_selection_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run the synthetic active-learning loop")
    p.add_argument("--layout", choices=(IMBALANCED, DOMINANT), default=IMBALANCED)
    p.add_argument("--train-images", type=int, default=40)
    p.add_argument("--eval-images", type=int, default=20)
    p.add_argument("--image-size", type=int, nargs=2, default=(128, 128), metavar=("H", "W"))
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--iterations", type=int, default=4)
    p.add_argument("--base", type=int, default=50)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--pca-dim", type=int)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--output")
    _add_selection_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate-metric", help="check the triangle inequality for (a, b, c)")
    p.add_argument("a", type=float)
    p.add_argument("b", type=float)
    p.add_argument("c", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--p-norm", choices=("1", "2", "inf"), default="inf")
    p.add_argument("--region-size", type=int, default=128)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate_metric)

    p = sub.add_parser("bench", help="time selection presets across budgets")
    p.add_argument("--n-regions", type=int, default=100_000)
    p.add_argument("--budgets", type=int, nargs="+", default=[1000])
    p.add_argument("--methods", nargs="+", default=["Entropy", "EntropySpatial", "EntropyFeature"])
    p.add_argument("--feature-dim", type=int, default=128)
    p.add_argument("--labeled", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=("auto", "python", "cython"), default="auto")
    p.add_argument("--output", help="CSV path (default stdout)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def _error(kind, exc, code=None):
    doc = {"error": code or kind, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, FormatError):
        doc.update(exc.to_dict())
    if isinstance(exc, PoolExhaustedError):
        doc.update(requested=exc.requested, available=exc.available)
    print(json.dumps(doc), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        return args.func(args)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        _error("runtime", exc, getattr(exc, "code", None) if isinstance(exc, FormatError) else None)
        return 1


if __name__ == "__main__":
    sys.exit(main())
