import itertools
import math

import numpy as np
import pytest

from spatial_al.diversity import DistanceSpec, Normalizers, placed, spatial_distance_piecewise
from spatial_al.errors import ConfigError, InstanceTooLargeError, InvalidInputError, PoolExhaustedError
from spatial_al.regions import PoolState, build_grid, commit_batch, init_labeled_pool
from spatial_al.scoring import ScoreTable
from spatial_al.selection import (
    MAX_SUM, PRESETS, MinDistCache, SelectionConfig, brute_force_select, build_cache,
    build_instance, dense_distance_matrix, evaluate_batch, greedy_select,
    max_sum_greedy_select, potential, preset, random_select, update_min_dist_cache,
)
from tests.conftest import random_pool


def scores_from_normalized(u):
    return ScoreTable.from_raw(np.asarray(u, dtype=float), scale=1.0)


@pytest.mark.parametrize("name,triple", [
    ("EntropySpatial", (1, 0, 1)), ("CoreSet", (0, 1, 0)), ("Entropy", (1, 0, 0)),
    ("FeatureSpatial", (0, 1, 1)), ("EntropyFeature", (1, 1, 0)),
    ("EntropyFeatureSpatial", (1, 1, 1)), ("Random", (0, 0, 0)),
])
def test_preset_weights(name, triple):
    cfg = preset(name)
    assert (cfg.lambda_u, cfg.distance.lambda_f, cfg.distance.lambda_s) == triple
    assert cfg.method_name == name


def test_preset_aliases_and_unknown():
    assert preset("entropy+spatial").method_name == "EntropySpatial"
    assert preset("Feature").method_name == "CoreSet"
    assert preset("EntropySpatial", region_size=32).distance.tau == 32
    with pytest.raises(ConfigError):
        preset("BALD")


def test_config_validation_and_roundtrip():
    with pytest.raises(ConfigError):
        SelectionConfig(batch_size=0)
    with pytest.raises(ConfigError):
        SelectionConfig(lambda_u=0, distance=DistanceSpec(lambda_s=0))
    SelectionConfig(lambda_u=0, distance=DistanceSpec(lambda_s=0), method_name="Random")
    cfg = preset("EntropyFeatureSpatial", batch_size=7, seed=3, objective=MAX_SUM, p_norm=2)
    assert SelectionConfig.from_dict(cfg.to_dict()) == cfg


def one_image_pool(labeled, shape=(128, 512), n=128):
    grid = build_grid([shape, shape], n)
    status = np.zeros(len(grid), dtype=np.int8)
    status[labeled] = 1
    return PoolState(grid, status)


def test_potential_examples():
    # labeled region in image 0; candidate in image 1 is a cross-image pair
    pool = one_image_pool([0])
    cfg = preset("EntropySpatial")
    cache, _ = build_cache(pool, None, cfg)
    u = np.zeros(len(pool.grid))
    cand_far, cand_near = pool.grid.index_of((1, 0, 0)), pool.grid.index_of((0, 0, 128))
    u[cand_far], u[cand_near] = 1.0, 0.9
    s = scores_from_normalized(u)
    assert potential(cand_far, s, cache, 1.0) == 2.0
    assert potential(cand_near, s, cache, 1.0) == pytest.approx(1.4)
    assert potential(cand_near, s, cache, 0.0) == cache.min_distance(cand_near) == 0.5


def test_entropy_degenerate_top_k_with_id_ties():
    rng = np.random.default_rng(0)
    grid, state, _ = random_pool(rng)
    u = rng.integers(0, 4, len(grid)) / 4.0
    res = greedy_select(state, scores_from_normalized(u), None, preset("Entropy", batch_size=6))
    cand = state.unlabeled_indices()
    expected = sorted(cand, key=lambda i: (-u[i], grid.region_id(i)))[:6]
    assert res.batch == expected


def farthest_first(x, start, k):
    """Reference k-center greedy on raw feature vectors."""
    d = np.full(len(x), np.inf)
    for s in start:
        d = np.minimum(d, np.sqrt(((x - x[s]) ** 2).sum(axis=1)))
    out = []
    for _ in range(k):
        i = int(np.argmax(d))
        out.append(i)
        d = np.minimum(d, np.sqrt(((x - x[i]) ** 2).sum(axis=1)))
    return out


def test_coreset_is_farthest_first():
    rng = np.random.default_rng(2)
    grid, state, scores = random_pool(rng, n_images=3, labeled=4)
    x = rng.normal(size=(len(grid), 5))
    res = greedy_select(state, scores, x, preset("CoreSet", batch_size=10))
    assert res.batch == farthest_first(x, state.labeled_indices(), 10)


def exhaustive_trace(inst, lam, k):
    """Greedy trace recomputed from the dense oracle matrix."""
    chosen = list(inst.labeled)
    picks = []
    for _ in range(k):
        best, best_phi = None, -math.inf
        for c in inst.candidates:
            if c in picks:
                continue
            d = min((inst.dist[c, s] for s in chosen), default=inst.empty_value)
            phi = lam * inst.u[c] + d
            if phi > best_phi:
                best, best_phi = c, phi
        picks.append(best)
        chosen.append(best)
    return [inst.indices[p] for p in picks]


@pytest.mark.parametrize("seed", range(5))
def test_six_region_trace_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    grid = build_grid([(32, 48)], 16)  # 6 regions
    state = init_labeled_pool(grid, 1, seed)
    scores = ScoreTable.from_raw(rng.uniform(0, 1, 6), scale=1.0)
    cfg = preset("EntropySpatial", batch_size=2, region_size=16)
    res = greedy_select(state, scores, None, cfg)
    inst = build_instance(state, scores, None, cfg)
    assert res.batch == exhaustive_trace(inst, 1.0, 2)


def test_max_sum_single_region_pool_matches_max_min():
    rng = np.random.default_rng(1)
    grid, state, scores = random_pool(rng, labeled=1)
    a = greedy_select(state, scores, None, preset("EntropySpatial", batch_size=1, region_size=16))
    b = max_sum_greedy_select(state, scores, None,
                              preset("EntropySpatial", batch_size=1, region_size=16, objective=MAX_SUM))
    assert a.batch == b.batch
    assert "max_sum" in b.flags


@pytest.mark.parametrize("seed", range(10))
def test_max_sum_within_factor_two(seed):
    rng = np.random.default_rng(seed)
    grid = build_grid([(32, 64), (32, 32)], 16)  # 12 regions
    state = init_labeled_pool(grid, 4, seed)     # 8 candidates
    scores = ScoreTable.from_raw(rng.uniform(0, 1, len(grid)), scale=1.0)
    cfg = preset("EntropySpatial", batch_size=3, region_size=16, objective=MAX_SUM)
    res = greedy_select(state, scores, None, cfg)
    _, best = brute_force_select(state, scores, None, cfg)
    assert evaluate_batch(state, scores, None, cfg, res.batch) >= 0.5 * best


def test_errors():
    rng = np.random.default_rng(0)
    grid, state, scores = random_pool(rng)
    with pytest.raises(PoolExhaustedError, match="shortfall"):
        greedy_select(state, scores, None, preset("EntropySpatial", batch_size=len(grid)))
    with pytest.raises(ConfigError):
        greedy_select(state, scores, None, preset("CoreSet", batch_size=2))
    with pytest.raises(InvalidInputError):
        greedy_select(state, scores, np.zeros((3, 2)), preset("CoreSet", batch_size=2))
    with pytest.raises(InstanceTooLargeError):
        brute_force_select(state, scores, None, preset("EntropySpatial", batch_size=2))


def test_result_invariants_and_determinism():
    rng = np.random.default_rng(3)
    grid, state, scores = random_pool(rng, n_images=3, labeled=5)
    x = rng.normal(size=(len(grid), 4))
    cfg = preset("EntropyFeatureSpatial", batch_size=9, region_size=16)
    a = greedy_select(state, scores, x, cfg)
    b = greedy_select(state, scores, x, cfg)
    assert a.picks == b.picks
    assert len(a) == 9 and len(set(a.batch)) == 9
    assert set(a.batch) <= set(state.unlabeled_indices())
    assert a.distance_evals <= len(grid) * 9
    after = commit_batch(state.with_batch(a.batch))
    assert after.n_labeled == state.n_labeled + 9


def test_random_select_seeded_without_replacement():
    rng = np.random.default_rng(0)
    grid, state, scores = random_pool(rng, n_images=4)
    a = random_select(state, 20, seed=5)
    assert a.batch == random_select(state, 20, seed=5).batch
    assert len(set(a.batch)) == 20 and set(a.batch) <= set(state.unlabeled_indices())
    assert a.batch != random_select(state, 20, seed=6).batch


def test_random_select_is_uniform():
    grid = build_grid([(40, 40)], 10)
    state = PoolState(grid)
    counts = np.zeros(len(grid))
    for s in range(3000):
        counts[random_select(state, 4, s).batch] += 1
    expected = 3000 * 4 / len(grid)
    assert np.all(np.abs(counts - expected) < 5 * math.sqrt(expected))


def test_entropy_random_split():
    rng = np.random.default_rng(0)
    grid, state, scores = random_pool(rng, n_images=3)
    res = greedy_select(state, scores, None, preset("EntropyRandom", batch_size=7))
    top = greedy_select(state, scores, None, preset("Entropy", batch_size=4)).batch
    assert res.batch[:4] == top
    assert len(set(res.batch)) == 7


def test_cache_rejects_double_apply_and_reuse_matches_fresh():
    rng = np.random.default_rng(4)
    grid, state, scores = random_pool(rng, n_images=3)
    cfg = preset("EntropySpatial", batch_size=5, region_size=16)
    first = greedy_select(state, scores, None, cfg)
    with pytest.raises(InvalidInputError):
        update_min_dist_cache(first.cache, first.batch[0])
    nxt = commit_batch(state.with_batch(first.batch))
    reused = greedy_select(nxt, scores, None, cfg, cache=first.cache)
    fresh = greedy_select(nxt, scores, None, cfg)
    assert reused.batch == fresh.batch
    assert np.array_equal(reused.cache.values, fresh.cache.values)


def test_empty_pool_uses_maximum_distance():
    grid = build_grid([(32, 32), (32, 32)], 16)
    state = PoolState(grid)
    u = np.array([0.1, 0.9, 0.3, 0.2, 0.5, 0.4, 0.8, 0.7])
    res = greedy_select(state, scores_from_normalized(u), None,
                        preset("EntropySpatial", batch_size=2, region_size=16))
    assert res.picks[0].index == 1 and res.picks[0].d_term == 1.0
    # second pick: cross-image region with the highest uncertainty
    assert res.picks[1].index == 6


def test_checkerboard_refutation():
    # selected region at the centre of a 3x3 image; its neighbour is maximally uncertain
    grid = build_grid([(384, 384)], 128)
    status = np.zeros(len(grid), dtype=np.int8)
    centre = grid.index_of((0, 128, 128))
    status[centre] = 1
    state = PoolState(grid, status)
    u = np.zeros(len(grid))
    neighbour = grid.index_of((0, 0, 128))
    u[neighbour] = 1.0
    res = greedy_select(state, scores_from_normalized(u), None, preset("EntropySpatial"))
    pick = res.batch[0]
    assert pick == neighbour
    assert spatial_distance_piecewise(placed(grid, pick), placed(grid, centre),
                                      preset("EntropySpatial").distance) == 1.0


def test_dense_matrix_symmetric():
    rng = np.random.default_rng(0)
    grid, state, scores = random_pool(rng)
    cfg = preset("EntropySpatial", region_size=16)
    m = dense_distance_matrix(grid, list(range(len(grid))), cfg.distance, Normalizers(2.0, 0.0))
    assert np.array_equal(m, m.T) and np.all(np.diag(m) == 0)
