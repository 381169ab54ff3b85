"""Selection timing harness: presets x budgets on a synthetic region pool."""
from __future__ import annotations

import csv
import io
import math
import statistics
import time

import numpy as np

from . import kernels
from .regions import build_grid, init_labeled_pool
from .scoring import ScoreTable
from .selection import greedy_select, preset

# 1024 x 2048 images tiled with N = 128 give 128 regions each
IMAGE_SHAPE = (1024, 2048)
REGION_SIZE = 128


def synthetic_pool(n_regions, feature_dim, labeled, seed=0):
    per_image = (IMAGE_SHAPE[0] // REGION_SIZE) * (IMAGE_SHAPE[1] // REGION_SIZE)
    n_images = math.ceil(n_regions / per_image)
    grid = build_grid([IMAGE_SHAPE] * n_images, REGION_SIZE)
    rng = np.random.Generator(np.random.PCG64(seed))
    scores = ScoreTable.from_raw(rng.uniform(0.0, math.log(19), len(grid)), 19)
    features = rng.normal(size=(len(grid), feature_dim)) if feature_dim else None
    state = init_labeled_pool(grid, labeled, seed)
    return state, scores, features


def time_selection(state, scores, features, method, budget, repeats=3, backend=None):
    cfg = preset(method, batch_size=budget, region_size=REGION_SIZE)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        greedy_select(state, scores, features, cfg, backend=backend)
        times.append(time.perf_counter() - t0)
    return times


def run_bench(n_regions=100_000, budgets=(1000,), methods=("Entropy", "EntropySpatial",
              "EntropyFeature"), feature_dim=128, labeled=1000, repeats=3, seed=0,
              backend=None, log=None):
    backend = kernels.get_backend(backend) if isinstance(backend, str) or backend is None else backend
    state, scores, features = synthetic_pool(n_regions, feature_dim, labeled, seed)
    rows = []
    for method in methods:
        for budget in budgets:
            times = time_selection(state, scores, features, method, budget, repeats, backend)
            row = {
                "method": method,
                "budget": budget,
                "seconds_mean": statistics.fmean(times),
                "seconds_std": statistics.stdev(times) if len(times) > 1 else 0.0,
            }
            rows.append(row)
            if log:
                log(f"{backend.NAME:7s} {method:22s} K={budget:<6d} "
                    f"{row['seconds_mean']:.3f}s ± {row['seconds_std']:.3f}")
    return rows


def rows_to_csv(rows, extra_columns=()):
    buf = io.StringIO()
    fields = ["method", "budget", "seconds_mean", "seconds_std", *extra_columns]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "seconds_mean": f"{r['seconds_mean']:.6f}",
                    "seconds_std": f"{r['seconds_std']:.6f}"})
    return buf.getvalue()
