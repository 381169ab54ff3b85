"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed at the end of the
pytest run and when this file is executed directly.
"""
import math
import sys
import time
import warnings

import numpy as np
import pytest

from spatial_al import kernels
from spatial_al.bench import run_bench
from spatial_al.diversity import (
    LINEAR, PIECEWISE, DistanceSpec, count_triangle_violations, find_counterexample, placed,
    spatial_distance_piecewise,
)
from spatial_al.errors import DegeneratePcaWarning
from spatial_al.features import fit_pca, pca_project, pca_reconstruct
from spatial_al.regions import LABELED, PoolState, build_grid
from spatial_al.scoring import ScoreTable
from spatial_al.selection import (
    MAX_SUM, brute_force_select, evaluate_batch, greedy_select, preset,
)
from spatial_al.sim import LoopConfig, SyntheticDatasetSpec, compare_methods

_RESULTS = {}


def record(n, ok, detail):
    _RESULTS[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {detail}"
    print(_RESULTS[n])
    return ok


def report_lines():
    return [_RESULTS[k] for k in sorted(_RESULTS)]


def pcg(seed):
    return np.random.Generator(np.random.PCG64(seed))


# ----------------------------------------------------------------- 1


def test_criterion_01_metric_theorem():
    t0 = time.perf_counter()
    grid = build_grid([(1024, 2048)] * 2, 128)
    ok_spec = DistanceSpec(a=1, b=2, c=2, tau=128)
    bad_spec = DistanceSpec(a=1, b=2.5, c=3, tau=128)
    violations, _ = count_triangle_violations(grid, ok_spec, 100_000, seed=0)
    witness = find_counterexample(grid, bad_spec)
    found = False
    if witness is not None:
        x, y, z = (placed(grid, grid.index_of(r)) for r in witness)
        d = lambda p, q: spatial_distance_piecewise(p, q, bad_spec)
        found = d(x, z) > d(x, y) + d(y, z)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and found and elapsed < 10
    record(1, ok, f"(1,2,2): {violations} violations in 1e5 triples; (1,2.5,3) counterexample "
                  f"{'found ' + str([tuple(r) for r in witness]) if found else 'missing'}; {elapsed:.2f}s")
    assert ok


# ----------------------------------------------------------------- 2


def random_small_instance(rng):
    """Random pool with at most 12 candidates and K <= 4."""
    while True:
        n_img = int(rng.integers(1, 4))
        cat = [(int(rng.integers(1, 4)) * 8, int(rng.integers(1, 4)) * 8) for _ in range(n_img)]
        grid = build_grid(cat, 8)
        n = len(grid)
        if n < 3:
            continue
        name = str(rng.choice(["EntropySpatial", "EntropyFeature", "EntropyFeatureSpatial",
                               "CoreSet", "FeatureSpatial"]))
        lo = 1 if name in ("EntropyFeature", "EntropyFeatureSpatial", "CoreSet", "FeatureSpatial") else 0
        n_lab = int(rng.integers(lo, min(3, n - 2) + 1))
        if n - n_lab > 12 or n_lab < lo:
            continue
        status = np.zeros(n, dtype=np.int8)
        status[rng.permutation(n)[:n_lab]] = LABELED
        k = int(rng.integers(1, min(4, n - n_lab) + 1))
        overrides = {}
        if rng.random() < 0.3:
            overrides = {"spatial_form": LINEAR, "p_norm": rng.choice(["1", "2", "inf"])}
        cfg = preset(name, batch_size=k, region_size=8, **overrides)
        feats = rng.normal(size=(n, 3))
        scores = ScoreTable.from_raw(rng.uniform(0, math.log(8), n), 8)
        return PoolState(grid, status), scores, feats, cfg


def test_criterion_02_greedy_vs_brute_force():
    t0 = time.perf_counter()
    rng = pcg(2)
    ratios, exact = [], 0
    for _ in range(200):
        pool, scores, feats, cfg = random_small_instance(rng)
        res = greedy_select(pool, scores, feats, cfg)
        norms = res.cache.normalizers
        _, opt = brute_force_select(pool, scores, feats, cfg, normalizers=norms)
        got = evaluate_batch(pool, scores, feats, cfg, res.batch, normalizers=norms)
        ratios.append(got / opt if opt > 0 else 1.0)
        exact += abs(got - opt) <= 1e-12
    elapsed = time.perf_counter() - t0
    passing = sum(r >= 0.5 for r in ratios)
    ok = passing == 200 and elapsed < 60
    record(2, ok, f"{passing}/200 instances >= 0.5 x optimum (worst ratio {min(ratios):.3f}); "
                  f"exact-match rate {exact / 200:.1%}; {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------- 3


def farthest_first(x, start, k):
    d = np.full(len(x), np.inf)
    for s in start:
        d = np.minimum(d, np.linalg.norm(x - x[s], axis=1))
    order = []
    for _ in range(k):
        i = int(np.argmax(d))
        order.append(i)
        d = np.minimum(d, np.linalg.norm(x - x[i], axis=1))
    return order


def test_criterion_03_coreset_is_k_center_greedy():
    rng = pcg(3)
    matches = 0
    for _ in range(50):
        n = int(rng.integers(30, 301))
        k = int(rng.integers(1, 21))
        grid = build_grid([(8, 8 * n)], 8)
        status = np.zeros(n, dtype=np.int8)
        start = rng.choice(n, size=int(rng.integers(1, 6)), replace=False)
        status[start] = LABELED
        x = rng.normal(size=(n, int(rng.integers(2, 17))))
        scores = ScoreTable.from_raw(rng.random(n), scale=1.0)
        res = greedy_select(PoolState(grid, status), scores, x, preset("CoreSet", batch_size=k))
        matches += res.batch == farthest_first(x, start, k)
    ok = matches == 50
    record(3, ok, f"CoreSet pick sequence equals farthest-first on {matches}/50 feature sets")
    assert ok


# ----------------------------------------------------------------- 4


def test_criterion_04_entropy_degeneracy():
    rng = pcg(4)
    matches = 0
    for _ in range(50):
        shapes = [(int(rng.integers(1, 6)) * 16, int(rng.integers(1, 6)) * 16)
                  for _ in range(int(rng.integers(1, 5)))]
        grid = build_grid(shapes, 16)
        n = len(grid)
        status = np.zeros(n, dtype=np.int8)
        status[rng.choice(n, size=int(rng.integers(0, n // 2 + 1)), replace=False)] = LABELED
        pool = PoolState(grid, status)
        levels = int(rng.integers(2, 8))  # coarse levels force ties
        u = rng.integers(0, levels, n) / (levels - 1)
        k = int(rng.integers(1, pool.n_unlabeled + 1))
        res = greedy_select(pool, ScoreTable.from_raw(u, scale=1.0), None, preset("Entropy", batch_size=k))
        cand = pool.unlabeled_indices()
        expected = sorted(cand, key=lambda i: (-u[i], grid.region_id(i)))[:k]
        matches += res.batch == expected
    ok = matches == 50
    record(4, ok, f"Entropy batch equals top-K with RegionId tie-breaks on {matches}/50 tables")
    assert ok


# ----------------------------------------------------------------- 5


def test_criterion_05_cache_consistency():
    rng = pcg(5)
    checks, bad = 0, 0
    methods = ["EntropySpatial", "EntropyFeature", "EntropyFeatureSpatial", "CoreSet", "FeatureSpatial"]
    for run in range(30):
        n_img = int(rng.integers(1, 6))
        grid = build_grid([(int(rng.integers(2, 11)) * 8, int(rng.integers(2, 11)) * 8)
                           for _ in range(n_img)], 8)
        while len(grid) > 500:
            grid = build_grid([(80, 80)] * 3, 8)
        n = len(grid)
        status = np.zeros(n, dtype=np.int8)
        status[rng.choice(n, size=int(rng.integers(0, min(20, n // 2) + 1)), replace=False)] = LABELED
        pool = PoolState(grid, status)
        k = int(rng.integers(1, min(50, pool.n_unlabeled) + 1))
        overrides = {"spatial_form": LINEAR, "p_norm": "2"} if run % 3 == 0 else {}
        cfg = preset(methods[run % len(methods)], batch_size=k, region_size=8, **overrides)
        x = rng.normal(size=(n, 6))
        scores = ScoreTable.from_raw(rng.random(n), scale=1.0)
        backend = kernels.BACKENDS["python"] if run % 2 else kernels.backend

        def on_pick(cache, pick):
            nonlocal checks, bad
            checks += 1
            bad += not np.array_equal(cache.values, cache.naive())

        greedy_select(pool, scores, x, cfg, backend=backend, on_pick=on_pick)
    ok = bad == 0
    record(5, ok, f"cache equals naive recomputation after {checks - bad}/{checks} picks (30 runs)")
    assert ok


# ----------------------------------------------------------------- 6


def test_criterion_06_affine_invariance():
    rng = pcg(6)
    same = 0
    names = ["Entropy", "EntropySpatial", "EntropyFeature", "EntropyFeatureSpatial"]
    for trial in range(20):
        grid = build_grid([(64, 64)] * int(rng.integers(1, 5)), 16)
        n = len(grid)
        status = np.zeros(n, dtype=np.int8)
        status[rng.choice(n, size=int(rng.integers(1, 6)), replace=False)] = LABELED
        pool = PoolState(grid, status)
        scores = ScoreTable.from_raw(rng.uniform(0, math.log(19), n), 19)
        x = rng.normal(size=(n, 4))
        objective = MAX_SUM if trial % 5 == 4 else "max_min"
        cfg = preset(names[trial % 4], batch_size=int(rng.integers(1, min(10, pool.n_unlabeled) + 1)),
                     region_size=16, objective=objective)
        a = greedy_select(pool, scores, x, cfg)
        b = greedy_select(pool, scores.affine(3.0, 0.2), x, cfg)
        same += a.batch == b.batch
    ok = same == 20
    record(6, ok, f"u -> 3u + 0.2 gives identical batches on {same}/20 instances")
    assert ok


# ------------------------------------------------------------- 7 and 8

SIM_SEEDS = range(5)
SIM_METHODS = {
    "Random": ("Random", {}),
    "Entropy": ("Entropy", {}),
    "EntropySpatial": ("EntropySpatial", {}),
    "ES-maxsum": ("EntropySpatial", {"objective": MAX_SUM}),
    "ES-linear": ("EntropySpatial", {"spatial_form": LINEAR}),
}


@pytest.fixture(scope="module")
def simulation():
    t0 = time.perf_counter()
    spec = SyntheticDatasetSpec(num_train_images=40, num_eval_images=20, image_size=(128, 128),
                                num_classes=8)
    loop = LoopConfig(iterations=4, base=50, region_size=8)
    runs = compare_methods(spec, SIM_METHODS, loop, SIM_SEEDS)
    miou = {m: np.array([[r.miou for r in runs[(m, s)].records] for s in SIM_SEEDS]) for m in SIM_METHODS}
    imgs = {m: np.array([[r.images_touched for r in runs[(m, s)].records] for s in SIM_SEEDS])
            for m in SIM_METHODS}
    return miou, imgs, time.perf_counter() - t0


def test_criterion_07_directional_end_to_end(simulation):
    miou, _, elapsed = simulation
    es = miou["EntropySpatial"][:, -2:]
    parts, ok = [], True
    for other in ("Entropy", "Random"):
        diff = es - miou[other][:, -2:]
        wins = (diff >= 0).sum(axis=0)
        good = bool(np.all(diff.mean(axis=0) >= 0) and np.all(wins >= 4))
        ok &= good
        parts.append(f"ES-{other} mean {np.round(diff.mean(axis=0), 4).tolist()} wins {wins.tolist()}/5")
    for other, label in (("ES-maxsum", "max-min vs max-sum"), ("ES-linear", "piece-wise vs linear")):
        diff = (es - miou[other][:, -2:]).mean(axis=0)
        ok &= bool(np.all(diff >= 0))
        parts.append(f"{label} mean {np.round(diff, 4).tolist()}")
    ok &= elapsed < 600
    record(7, ok, "; ".join(parts) + f"; {elapsed:.0f}s")
    assert ok


def test_criterion_08_distinct_image_ordering(simulation):
    _, imgs, _ = simulation
    r, es, e = (imgs[m].mean(axis=0)[1:] for m in ("Random", "EntropySpatial", "Entropy"))
    ok = bool(np.all(r >= es) and np.all(es >= e))
    record(8, ok, f"mean images touched per budget: Random {r.tolist()} >= ES {es.tolist()} "
                  f">= Entropy {e.tolist()}")
    assert ok


# ----------------------------------------------------------------- 9


def test_criterion_09_performance_ratio():
    t0 = time.perf_counter()
    rows = run_bench(n_regions=100_000, budgets=(1000,), methods=("EntropySpatial", "EntropyFeature"),
                     feature_dim=128, labeled=1000, repeats=1)
    elapsed = time.perf_counter() - t0
    t = {r["method"]: r["seconds_mean"] for r in rows}
    ratio = t["EntropyFeature"] / t["EntropySpatial"]
    ok = ratio >= 5 and elapsed < 300
    record(9, ok, f"backend {kernels.backend.NAME}: EntropySpatial {t['EntropySpatial']:.2f}s, "
                  f"EntropyFeature {t['EntropyFeature']:.2f}s, ratio {ratio:.1f}x; bench {elapsed:.0f}s")
    assert ok


# ----------------------------------------------------------------- 10


def test_criterion_10_pca():
    rng = pcg(10)
    x = rng.normal(size=(400, 32)) * rng.uniform(0.1, 4, 32)
    model = fit_pca(x, 16)
    ortho = np.max(np.abs(model.components @ model.components.T - np.eye(16)))

    full = fit_pca(x, 32)
    y = pca_project(full, x)
    i, j = rng.integers(0, 400, (2, 2000))
    iso = np.max(np.abs(np.linalg.norm(x[i] - x[j], axis=1) - np.linalg.norm(y[i] - y[j], axis=1)))

    basis = np.linalg.qr(rng.normal(size=(32, 5)))[0].T
    sub = rng.normal(size=(300, 5)) @ basis + rng.normal(size=32)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegeneratePcaWarning)
        sm = fit_pca(sub, 5)
    recon = np.max(np.abs(pca_reconstruct(sm, pca_project(sm, sub)) - sub))
    ok = ortho < 1e-6 and iso < 1e-6 and recon < 1e-6
    record(10, ok, f"orthonormality {ortho:.1e}, K=D distance error {iso:.1e}, "
                   f"subspace reconstruction {recon:.1e} (tol 1e-6)")
    assert ok


# ----------------------------------------------------------------- 11


def test_criterion_11_checkerboard_refutation():
    grid = build_grid([(384, 384)], 128)
    status = np.zeros(len(grid), dtype=np.int8)
    centre = grid.index_of((0, 128, 128))
    status[centre] = LABELED
    u = np.zeros(len(grid))
    neighbour = grid.index_of((0, 0, 128))
    u[neighbour] = 1.0  # every far region has uncertainty 0
    cfg = preset("EntropySpatial")
    res = greedy_select(PoolState(grid, status), ScoreTable.from_raw(u, scale=1.0), None, cfg)
    pick = res.batch[0]
    d = spatial_distance_piecewise(placed(grid, pick), placed(grid, centre), cfg.distance)
    ok = d == cfg.distance.a and pick == neighbour
    record(11, ok, f"EntropySpatial picked {tuple(grid.region_id(pick))}, a tau-neighbour "
                   f"of selected {tuple(grid.region_id(centre))} (potential {res.picks[0].potential})")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
