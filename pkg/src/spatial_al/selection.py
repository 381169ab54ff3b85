"""Greedy Max-Min batch selection with an incremental min-distance cache.

Every candidate x carries the minimum normalized distance from x to the
selected pool L_t ∪ B_t. A pick costs one pass over all n regions to refresh
that minimum, so a batch of K picks costs n*K distance evaluations.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .diversity import (
    LINEAR,
    DistanceSpec,
    Normalizers,
    normalized_combined_distance,
    placed,
    spatial_divisor,
)
from .errors import ConfigError, InstanceTooLargeError, InvalidInputError, PoolExhaustedError
from .regions import UNLABELED, PoolState, RegionGrid
from .scoring import ScoreTable

MAX_MIN = "max_min"
MAX_SUM = "max_sum"

PRESETS = {
    # name: (lambda_u, lambda_f, lambda_s)
    "Random": (0.0, 0.0, 0.0),
    "Entropy": (1.0, 0.0, 0.0),
    "EntropyRandom": (1.0, 0.0, 0.0),
    "CoreSet": (0.0, 1.0, 0.0),
    "FeatureSpatial": (0.0, 1.0, 1.0),
    "EntropyFeature": (1.0, 1.0, 0.0),
    "EntropySpatial": (1.0, 0.0, 1.0),
    "EntropyFeatureSpatial": (1.0, 1.0, 1.0),
}
_ALIASES = {name.lower(): name for name in PRESETS}
_ALIASES.update({"feature": "CoreSet", "core-set": "CoreSet", "coreset": "CoreSet"})


@dataclass
class SelectionConfig:
    lambda_u: float = 1.0
    distance: DistanceSpec = field(default_factory=DistanceSpec)
    batch_size: int = 1
    seed: int = 0
    objective: str = MAX_MIN
    method_name: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lambda_u < 0:
            raise ConfigError("lambda_u must be non-negative")
        if self.objective not in (MAX_MIN, MAX_SUM):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.method_name != "Random" and not (
            self.lambda_u > 0 or self.distance.lambda_f > 0 or self.distance.lambda_s > 0
        ):
            raise ConfigError("at least one of lambda_u, lambda_f, lambda_s must be positive")

    @property
    def uses_diversity(self):
        return self.distance.lambda_f > 0 or self.distance.lambda_s > 0

    def to_dict(self):
        return {
            "method": self.method_name,
            "lambda_u": self.lambda_u,
            "distance": self.distance.to_dict(),
            "batch_size": self.batch_size,
            "seed": self.seed,
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            lambda_u=float(d.get("lambda_u", 1.0)),
            distance=DistanceSpec.from_dict(d.get("distance", {})),
            batch_size=int(d.get("batch_size", 1)),
            seed=int(d.get("seed", 0)),
            objective=d.get("objective", MAX_MIN),
            method_name=d.get("method"),
        )


def preset(name, batch_size=1, seed=0, region_size=128, **distance_overrides) -> SelectionConfig:
    """Configuration for a named method; tau defaults to the region size."""
    canonical = _ALIASES.get(str(name).lower().replace("+", "").replace("_", ""))
    if canonical is None:
        canonical = _ALIASES.get(str(name).lower())
    if canonical is None:
        raise ConfigError(f"unknown method {name!r}; choose from {sorted(PRESETS)}")
    lu, lf, ls = PRESETS[canonical]
    objective = distance_overrides.pop("objective", MAX_MIN)
    dist = {"tau": float(region_size), "lambda_f": lf, "lambda_s": ls}
    dist.update(distance_overrides)
    return SelectionConfig(
        lambda_u=lu,
        distance=DistanceSpec(**dist),
        batch_size=batch_size,
        seed=seed,
        objective=objective,
        method_name=canonical,
    )


@dataclass
class Pick:
    index: int
    potential: float
    u_term: float
    d_term: float


@dataclass
class SelectionResult:
    grid: RegionGrid
    picks: list
    method: str | None
    objective: str
    wall_time: float = 0.0
    distance_evals: int = 0
    init_distance_evals: int = 0
    flags: list = field(default_factory=list)
    cache: "MinDistCache | None" = field(default=None, repr=False)

    @property
    def batch(self):
        return [p.index for p in self.picks]

    @property
    def batch_ids(self):
        return self.grid.region_ids(self.batch)

    def __len__(self):
        return len(self.picks)


def _prepare_features(grid, features, spec):
    n = len(grid)
    if spec.lambda_f > 0:
        if features is None:
            raise ConfigError("lambda_f > 0 requires a feature matrix")
        feats = np.ascontiguousarray(features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise InvalidInputError(f"feature matrix must be ({n}, D), got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("feature matrix has non-finite entries")
        return feats
    return np.empty((n, 0), dtype=np.float64)


class MinDistCache:
    """Per-region minimum normalized combined distance to the selected pool.

    Entries for regions already in the pool are 0. ``applied`` marks pool
    members whose distances have been folded in.
    """

    def __init__(self, grid: RegionGrid, spec: DistanceSpec, features=None,
                 feature_divisor=0.0, backend=None):
        self.grid = grid
        self.spec = spec
        self.backend = backend or kernels.backend
        self.features = _prepare_features(grid, features, spec)
        self.image = np.ascontiguousarray(grid.image, dtype=np.int64)
        self.centers = np.ascontiguousarray(grid.centers, dtype=np.int64)
        self.cross = spatial_divisor(spec, grid) if spec.spatial_form == LINEAR else float(spec.c)
        self.normalizers = Normalizers(
            spatial=spatial_divisor(spec, grid), feature=float(feature_divisor)
        )
        self.empty_value = float(spec.lambda_f + spec.lambda_s)
        self.values = np.full(len(grid), self.empty_value, dtype=np.float64)
        self.applied = np.zeros(len(grid), dtype=bool)
        self._work = np.empty(len(grid), dtype=np.float64)
        self.evals = 0

    def params(self, raw_features=False):
        spec = self.spec
        if raw_features:
            return kernels.KernelParams(
                lambda_f=1.0, feat_div=1.0, lambda_s=0.0, spat_div=0.0, linear=0,
                p_code=0, a=0.0, b=0.0, c=0.0, tau=1.0, cross=0.0, f_cap=math.inf,
            )
        return kernels.KernelParams(
            lambda_f=spec.lambda_f,
            feat_div=self.normalizers.feature,
            lambda_s=spec.lambda_s,
            spat_div=self.normalizers.spatial,
            linear=int(spec.spatial_form == LINEAR),
            p_code=kernels.p_code(spec.p_norm),
            a=spec.a, b=spec.b, c=spec.c, tau=spec.tau, cross=self.cross,
        )

    @property
    def n_applied(self):
        return int(self.applied.sum())

    def set_feature_divisor(self, value):
        if self.n_applied:
            raise InvalidInputError("feature divisor is fixed once the cache holds distances")
        self.normalizers.feature = float(value)

    def apply(self, s):
        """Fold region ``s`` into the pool: cache = min(cache, d(s, .))."""
        if self.applied[s]:
            raise InvalidInputError(f"region {s} already applied to the cache")
        self.backend.update_min_cache(
            self.values, int(s), self.image, self.centers, self.features,
            self.params(), self._work,
        )
        self.applied[s] = True
        self.evals += len(self.values)

    def row(self, s, raw_features=False):
        out = np.empty(len(self.values), dtype=np.float64)
        self.backend.combined_row(
            int(s), self.image, self.centers, self.features,
            self.params(raw_features), out,
        )
        return out

    def min_distance(self, i):
        return float(self.values[i])

    def naive(self):
        """Recompute every entry from scratch as the min over all applied pool rows."""
        members = np.flatnonzero(self.applied)
        if members.size == 0:
            return np.full(len(self.values), self.empty_value)
        return np.min(np.stack([self.row(s) for s in members]), axis=0)

    def compatible(self, spec, features):
        """A cache survives across batches only if its divisors cannot change."""
        return self.spec == spec and spec.lambda_f == 0


def nearest_feature_distance(cache: MinDistCache, sources):
    """Raw (unnormalized) feature distance from every region to its nearest source."""
    nearest = np.full(len(cache.values), np.inf)
    for s in sources:
        np.minimum(nearest, cache.row(s, raw_features=True), out=nearest)
    return nearest


def feature_divisor(cache: MinDistCache, sources, candidates):
    """Largest distance from a candidate to its nearest region in ``sources``."""
    if len(sources) == 0 or len(candidates) == 0:
        return 0.0
    return float(nearest_feature_distance(cache, sources)[candidates].max())


def potential(candidate, scores: ScoreTable, cache: MinDistCache, lambda_u) -> float:
    return lambda_u * float(scores.normalized[candidate]) + cache.min_distance(candidate)


def update_min_dist_cache(cache: MinDistCache, newly_selected) -> MinDistCache:
    cache.apply(newly_selected)
    return cache


def _check_pool(pool: PoolState, scores: ScoreTable, k):
    if len(scores) != len(pool.grid):
        raise InvalidInputError("score table does not cover the grid")
    available = pool.n_unlabeled
    if available < k:
        raise PoolExhaustedError(k, available)


def build_cache(pool: PoolState, features, config: SelectionConfig, cache=None, backend=None):
    """Cache holding min distances to L_t ∪ B_t; reuses ``cache`` when allowed."""
    spec = config.distance
    grid = pool.grid
    selected = np.flatnonzero(pool.selected_mask())
    if cache is not None and cache.compatible(spec, features) and cache.grid is grid:
        stale = cache.applied & ~pool.selected_mask()
        if not stale.any():
            before = cache.evals
            for s in selected[~cache.applied[selected]]:
                cache.apply(s)
            return cache, cache.evals - before
    cache = MinDistCache(grid, spec, features, backend=backend)
    if spec.lambda_f > 0 and spec.lambda_s == 0 and len(selected):
        # feature-only: one pass gives both the divisor and the cache, since
        # x -> lambda_f * min(x / div, 1) is monotone and commutes with min
        nearest = nearest_feature_distance(cache, selected)
        div = float(nearest[pool.unlabeled_indices()].max()) if pool.n_unlabeled else 0.0
        cache.set_feature_divisor(div)
        if div > 0:
            cache.values = 0.0 + spec.lambda_f * np.minimum(nearest / div, 1.0)
        else:
            cache.values = np.zeros(len(grid))
        cache.applied[selected] = True
        cache.evals = len(grid) * len(selected)
        return cache, cache.evals
    if spec.lambda_f > 0:
        cache.set_feature_divisor(
            feature_divisor(cache, selected, pool.unlabeled_indices())
        )
    for s in selected:
        cache.apply(s)
    return cache, cache.evals


def _fix_divisor_after_first(cache, first, available):
    # empty pool: divisor comes from the first pick instead of L_t
    cache.set_feature_divisor(feature_divisor(cache, [first], np.flatnonzero(available)))


def greedy_select(pool: PoolState, scores: ScoreTable, features=None,
                  config: SelectionConfig = None, cache=None, backend=None,
                  on_pick=None) -> SelectionResult:
    """Pick ``config.batch_size`` regions one at a time, each maximizing the potential
    ``lambda_u * u(x) + min_{y in L ∪ B} d(x, y)`` over the remaining candidates.

    ``on_pick(cache, pick)`` is called after each cache update (Max-Min only).
    """
    config = config or SelectionConfig()
    if config.method_name == "Random":
        return random_select(pool, config.batch_size, config.seed)
    if config.method_name == "EntropyRandom":
        return entropy_random_select(pool, scores, config)
    if config.objective == MAX_SUM:
        return max_sum_greedy_select(pool, scores, features, config, backend=backend)
    k = config.batch_size
    _check_pool(pool, scores, k)
    t0 = time.perf_counter()
    u = np.ascontiguousarray(scores.normalized, dtype=np.float64)
    lu = float(config.lambda_u)
    available = pool.status == UNLABELED

    if not config.uses_diversity:
        phi = lu * u
        cand = np.flatnonzero(available)
        order = cand[np.argsort(-phi[cand], kind="stable")[:k]]
        picks = [Pick(int(i), float(phi[i]), float(phi[i]), 0.0) for i in order]
        return SelectionResult(pool.grid, picks, config.method_name, MAX_MIN,
                               wall_time=time.perf_counter() - t0)

    cache, init_evals = build_cache(pool, features, config, cache, backend)
    backend = cache.backend
    pending_divisor = config.distance.lambda_f > 0 and cache.n_applied == 0
    picks = []
    pick_evals = cache.evals
    for _ in range(k):
        i = backend.masked_argmax(lu, u, cache.values, available)
        d_term = float(cache.values[i])
        picks.append(Pick(int(i), lu * float(u[i]) + d_term, lu * float(u[i]), d_term))
        available[i] = False
        if pending_divisor:
            _fix_divisor_after_first(cache, i, available)
            pending_divisor = False
        cache.apply(i)
        if on_pick is not None:
            on_pick(cache, picks[-1])
    flags = cache.normalizers.flags() if config.distance.lambda_f > 0 else []
    return SelectionResult(
        pool.grid, picks, config.method_name, MAX_MIN,
        wall_time=time.perf_counter() - t0,
        distance_evals=cache.evals - pick_evals,
        init_distance_evals=init_evals,
        flags=flags,
        cache=cache,
    )


def max_sum_greedy_select(pool: PoolState, scores: ScoreTable, features=None,
                          config: SelectionConfig = None, backend=None) -> SelectionResult:
    """Greedy for the sum-form objective: marginal = lambda_u*u(x) + mean distance to the pool."""
    config = config or SelectionConfig(objective=MAX_SUM)
    k = config.batch_size
    _check_pool(pool, scores, k)
    t0 = time.perf_counter()
    u = np.ascontiguousarray(scores.normalized, dtype=np.float64)
    lu = float(config.lambda_u)
    available = pool.status == UNLABELED
    selected = list(np.flatnonzero(pool.selected_mask()))

    cache = MinDistCache(pool.grid, config.distance, features, backend=backend)
    backend = cache.backend
    if config.distance.lambda_f > 0 and selected:
        cache.set_feature_divisor(
            feature_divisor(cache, selected, np.flatnonzero(available))
        )
    total = np.zeros(len(u))
    for s in selected:
        total += cache.row(s)
    init_evals = len(u) * len(selected)
    count = len(selected)
    picks = []
    evals = 0
    for _ in range(k):
        mean = total / count if count else np.full(len(u), cache.empty_value)
        i = backend.masked_argmax(lu, u, mean, available)
        d_term = float(mean[i])
        picks.append(Pick(int(i), lu * float(u[i]) + d_term, lu * float(u[i]), d_term))
        available[i] = False
        if count == 0 and config.distance.lambda_f > 0:
            _fix_divisor_after_first(cache, i, available)
        total += cache.row(i)
        evals += len(u)
        count += 1
    flags = ["max_sum"]
    if config.distance.lambda_f > 0:
        flags += cache.normalizers.flags()
    return SelectionResult(
        pool.grid, picks, config.method_name, MAX_SUM,
        wall_time=time.perf_counter() - t0,
        distance_evals=evals, init_distance_evals=init_evals, flags=flags,
    )


def random_select(pool: PoolState, k, seed) -> SelectionResult:
    t0 = time.perf_counter()
    cand = pool.unlabeled_indices()
    if len(cand) < k:
        raise PoolExhaustedError(k, len(cand))
    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = rng.choice(cand, size=k, replace=False)
    picks = [Pick(int(i), 0.0, 0.0, 0.0) for i in chosen]
    return SelectionResult(pool.grid, picks, "Random", MAX_MIN, wall_time=time.perf_counter() - t0)


def entropy_random_select(pool: PoolState, scores: ScoreTable, config: SelectionConfig):
    """Top half of the batch by uncertainty, the rest uniformly from what remains."""
    t0 = time.perf_counter()
    k = config.batch_size
    _check_pool(pool, scores, k)
    n_entropy = (k + 1) // 2
    top = greedy_select(pool, scores, None, replace(
        config, method_name="Entropy", lambda_u=max(config.lambda_u, 1.0),
        distance=replace(config.distance, lambda_f=0.0, lambda_s=0.0),
        batch_size=n_entropy,
    ))
    rest = random_select(pool.with_batch(top.batch), k - n_entropy, config.seed) if k > n_entropy else None
    picks = top.picks + (rest.picks if rest else [])
    return SelectionResult(pool.grid, picks, "EntropyRandom", MAX_MIN,
                           wall_time=time.perf_counter() - t0)


# ---------------------------------------------------------------- oracles


def dense_distance_matrix(grid: RegionGrid, indices, spec: DistanceSpec, normalizers: Normalizers,
                          features=None):
    """Pairwise normalized combined distances via the scalar reference functions."""
    locs = [placed(grid, i) for i in indices]
    feats = None if features is None else np.asarray(features, dtype=np.float64)
    m = len(indices)
    out = np.zeros((m, m))
    for a in range(m):
        for b in range(a + 1, m):
            fa = feats[indices[a]] if feats is not None and spec.lambda_f > 0 else None
            fb = feats[indices[b]] if feats is not None and spec.lambda_f > 0 else None
            out[a, b] = out[b, a] = normalized_combined_distance(
                locs[a], locs[b], spec, normalizers, fa, fb
            )
    return out


def maxmin_objective(batch, labeled, u, dist, lambda_u, empty_value):
    """min_k lambda_u*u(x_k) + min over pairs in L ∪ B touching B.

    ``batch``/``labeled`` index into ``u`` and ``dist`` (local coordinates).
    """
    unary = min(lambda_u * u[k] for k in batch)
    pool = list(labeled) + list(batch)
    pair = math.inf
    in_batch = set(batch)
    for i, j in itertools.combinations(pool, 2):
        if i in in_batch or j in in_batch:
            pair = min(pair, dist[i, j])
    if pair == math.inf:
        pair = empty_value
    return unary + pair


def maxsum_objective(batch, labeled, u, dist, lambda_u):
    unary = sum(lambda_u * u[k] for k in batch)
    pool = list(labeled) + list(batch)
    in_batch = set(batch)
    pair = sum(
        dist[i, j] for i, j in itertools.combinations(pool, 2) if i in in_batch or j in in_batch
    )
    return unary + pair


@dataclass
class Instance:
    """Local view of a small selection problem used by the exhaustive oracles."""

    indices: list       # grid indices: labeled first, then candidates
    n_labeled: int
    u: np.ndarray
    dist: np.ndarray
    empty_value: float

    @property
    def labeled(self):
        return list(range(self.n_labeled))

    @property
    def candidates(self):
        return list(range(self.n_labeled, len(self.indices)))


def build_instance(pool: PoolState, scores: ScoreTable, features, config: SelectionConfig,
                   normalizers: Normalizers = None) -> Instance:
    spec = config.distance
    grid = pool.grid
    labeled = list(np.flatnonzero(pool.selected_mask()))
    cand = list(pool.unlabeled_indices())
    if normalizers is None:
        normalizers = Normalizers(spatial=spatial_divisor(spec, grid), feature=0.0)
        if spec.lambda_f > 0:
            if features is None:
                raise ConfigError("lambda_f > 0 requires a feature matrix")
            f = np.asarray(features, dtype=np.float64)
            if labeled:
                normalizers.feature = max(
                    min(np.linalg.norm(f[c] - f[l]) for l in labeled) for c in cand
                )
    indices = labeled + cand
    dist = dense_distance_matrix(grid, indices, spec, normalizers, features)
    u = np.asarray(scores.normalized, dtype=np.float64)[indices]
    return Instance(indices, len(labeled), u, dist, float(spec.lambda_f + spec.lambda_s))


def brute_force_select(pool: PoolState, scores: ScoreTable, features=None,
                       config: SelectionConfig = None, max_n=14, max_k=4, normalizers=None):
    """Exact Max-Min optimum over all C(n, K) batches (test oracle).

    Returns ``(batch grid indices, objective value)``; ties go to the
    lexicographically first batch.
    """
    config = config or SelectionConfig()
    k = config.batch_size
    n = pool.n_unlabeled
    if n > max_n or k > max_k:
        raise InstanceTooLargeError(
            f"brute force limited to n <= {max_n}, K <= {max_k} (got n={n}, K={k})"
        )
    if n < k:
        raise PoolExhaustedError(k, n)
    inst = build_instance(pool, scores, features, config, normalizers)
    best, best_val = None, -math.inf
    objective = maxsum_objective if config.objective == MAX_SUM else maxmin_objective
    for combo in itertools.combinations(inst.candidates, k):
        if config.objective == MAX_SUM:
            val = objective(combo, inst.labeled, inst.u, inst.dist, config.lambda_u)
        else:
            val = objective(combo, inst.labeled, inst.u, inst.dist, config.lambda_u, inst.empty_value)
        if val > best_val:
            best, best_val = combo, val
    return [inst.indices[i] for i in best], best_val


def evaluate_batch(pool: PoolState, scores: ScoreTable, features, config: SelectionConfig,
                   batch, normalizers=None) -> float:
    """Objective value of a given batch, with the same normalizers as the brute force."""
    inst = build_instance(pool, scores, features, config, normalizers)
    local = {g: l for l, g in enumerate(inst.indices)}
    b = [local[i] for i in batch]
    if config.objective == MAX_SUM:
        return maxsum_objective(b, inst.labeled, inst.u, inst.dist, config.lambda_u)
    return maxmin_objective(b, inst.labeled, inst.u, inst.dist, config.lambda_u, inst.empty_value)
