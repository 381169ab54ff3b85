"""Compare the compiled and pure-numpy selection kernels on the same synthetic pool.

    python benchmarks/bench_backends.py --n-regions 20000 --budgets 100 500
"""
import argparse
import sys

from spatial_al import kernels
from spatial_al.bench import rows_to_csv, run_bench


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-regions", type=int, default=20_000)
    p.add_argument("--budgets", type=int, nargs="+", default=[100, 500])
    p.add_argument("--methods", nargs="+", default=["EntropySpatial", "EntropyFeature",
                                                   "EntropyFeatureSpatial"])
    p.add_argument("--feature-dim", type=int, default=128)
    p.add_argument("--labeled", type=int, default=200)
    p.add_argument("--repeats", type=int, default=2)
    args = p.parse_args(argv)

    rows = []
    for name in sorted(kernels.BACKENDS):
        for row in run_bench(args.n_regions, args.budgets, args.methods, args.feature_dim,
                             args.labeled, args.repeats, backend=kernels.BACKENDS[name],
                             log=lambda s: print(s, file=sys.stderr)):
            rows.append({**row, "backend": name})
    sys.stdout.write(rows_to_csv(rows, extra_columns=("backend",)))
    if len(kernels.BACKENDS) == 2:
        t = {(r["backend"], r["method"], r["budget"]): r["seconds_mean"] for r in rows}
        for method in args.methods:
            for k in args.budgets:
                speedup = t["python", method, k] / t["cython", method, k]
                print(f"# {method} K={k}: cython {speedup:.1f}x faster", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
