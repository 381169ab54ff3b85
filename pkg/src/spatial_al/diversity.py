"""Spatial and feature distances between regions and their [0, 1] normalization."""
from __future__ import annotations

import itertools
import math
from fractions import Fraction
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InvalidInputError
from .regions import RegionGrid, RegionId

PIECEWISE = "piecewise"
LINEAR = "linear"


class PlacedRegion(NamedTuple):
    id: RegionId
    center: tuple


def placed(grid: RegionGrid, i) -> PlacedRegion:
    c = grid.centers[i]
    return PlacedRegion(grid.region_id(i), (int(c[0]), int(c[1])))


def parse_p_norm(p):
    if isinstance(p, str):
        p = p.strip().lower()
        if p in ("inf", "infinity", "max"):
            return math.inf
        p = float(p)
    p = float(p)
    if p not in (1.0, 2.0, math.inf):
        raise ConfigError(f"p_norm must be 1, 2 or inf, got {p}")
    return p


def lp_norm(delta, p) -> float:
    delta = np.abs(np.asarray(delta, dtype=np.float64))
    if p == math.inf:
        return float(delta.max())
    if p == 1:
        return float(delta.sum())
    return float(math.sqrt(float(np.dot(delta, delta))))


@dataclass
class DistanceSpec:
    spatial_form: str = PIECEWISE
    a: float = 1.0
    b: float = 2.0
    c: float = 2.0
    tau: float = 128.0
    p_norm: float = math.inf
    lambda_f: float = 0.0
    lambda_s: float = 1.0

    def __post_init__(self):
        self.p_norm = parse_p_norm(self.p_norm)
        if self.spatial_form not in (PIECEWISE, LINEAR):
            raise ConfigError(f"unknown spatial_form {self.spatial_form!r}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.lambda_f < 0 or self.lambda_s < 0:
            raise ConfigError("distance weights must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["p_norm"] = "inf" if self.p_norm == math.inf else int(self.p_norm)
        for k in ("a", "b", "c", "tau", "lambda_f", "lambda_s"):
            if float(d[k]).is_integer():
                d[k] = int(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def spatial_distance_piecewise(r1: PlacedRegion, r2: PlacedRegion, spec: DistanceSpec) -> float:
    if tuple(r1.id) == tuple(r2.id):
        return 0.0
    if r1.id.image_index != r2.id.image_index:
        return float(spec.c)
    gap = lp_norm(np.subtract(r1.center, r2.center), spec.p_norm)
    return float(spec.a) if gap <= spec.tau else float(spec.b)


def spatial_distance_linear(r1: PlacedRegion, r2: PlacedRegion, p_norm, cross_image: float) -> float:
    """L_p distance between centers; ``cross_image`` for pairs in different images."""
    if r1.id.image_index != r2.id.image_index:
        return float(cross_image)
    return lp_norm(np.subtract(r1.center, r2.center), parse_p_norm(p_norm))


def linear_cross_image_constant(grid: RegionGrid, p_norm) -> float:
    """Largest image diagonal in the chosen norm; no same-image pair can exceed it."""
    p = parse_p_norm(p_norm)
    return max(lp_norm((h, w), p) for _, h, w in grid.images)


def feature_distance(v1, v2) -> float:
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise InvalidInputError(f"feature dimensions differ: {v1.shape} vs {v2.shape}")
    return float(np.linalg.norm(v1 - v2))


def spatial_divisor(spec: DistanceSpec, grid: RegionGrid = None) -> float:
    if spec.spatial_form == PIECEWISE:
        return float(spec.c)
    if grid is None:
        raise ConfigError("linear spatial distance needs the grid for its divisor")
    return linear_cross_image_constant(grid, spec.p_norm)


@dataclass
class Normalizers:
    spatial: float
    feature: float

    def flags(self):
        out = []
        if not self.spatial > 0:
            out.append("zero_spatial_divisor")
        if not self.feature > 0:
            out.append("zero_feature_divisor")
        return out


def normalized_combined_distance(
    r1: PlacedRegion, r2: PlacedRegion, spec: DistanceSpec, normalizers: Normalizers,
    f1=None, f2=None, cross_image=None,
) -> float:
    """lambda_f * clip(d_f / feature_div, 0, 1) + lambda_s * d_s / spatial_div.

    A zero divisor drops its term (see ``Normalizers.flags``).
    """
    total = 0.0
    if spec.lambda_f > 0 and normalizers.feature > 0:
        total += spec.lambda_f * min(feature_distance(f1, f2) / normalizers.feature, 1.0)
    if spec.lambda_s > 0 and normalizers.spatial > 0:
        if spec.spatial_form == PIECEWISE:
            ds = spatial_distance_piecewise(r1, r2, spec)
        else:
            cross = normalizers.spatial if cross_image is None else cross_image
            ds = spatial_distance_linear(r1, r2, spec.p_norm, cross)
        total += spec.lambda_s * ds / normalizers.spatial
    return total


def check_metric_conditions(a, b, c):
    """Return the violated conditions of ``c >= b >= a > 0 and b <= 2a`` (empty = metric)."""
    violations = []
    if not a > 0:
        violations.append("a > 0")
    if not b >= a:
        violations.append("b >= a")
    if not c >= b:
        violations.append("c >= b")
    if not b <= 2 * a:
        violations.append("b <= 2a")
    return violations


def piecewise_matrix(image, centers, spec: DistanceSpec) -> np.ndarray:
    """Dense pairwise piece-wise distances for small layouts (tests, brute force)."""
    image = np.asarray(image)
    centers = np.asarray(centers, dtype=np.float64)
    delta = np.abs(centers[:, None, :] - centers[None, :, :])
    if spec.p_norm == math.inf:
        gap = delta.max(axis=-1)
    elif spec.p_norm == 1:
        gap = delta.sum(axis=-1)
    else:
        gap = np.sqrt((delta**2).sum(axis=-1))
    same = image[:, None] == image[None, :]
    d = np.where(same, np.where(gap <= spec.tau, spec.a, spec.b), spec.c).astype(np.float64)
    np.fill_diagonal(d, 0.0)
    return d


# ------------------------------------------------------- metric validation
# Piece-wise distances take one of four values, so a triple is classified by
# codes (0 same, 1 near, 2 far, 3 cross-image) and checked against a table
# built with exact rationals.


def piecewise_codes(grid: RegionGrid, i, j, spec: DistanceSpec) -> np.ndarray:
    i = np.asarray(i)
    j = np.asarray(j)
    delta = np.abs(grid.centers[i] - grid.centers[j])
    if spec.p_norm == math.inf:
        near = delta.max(axis=-1) <= spec.tau
    elif spec.p_norm == 1:
        near = delta.sum(axis=-1) <= spec.tau
    else:
        # integer centers: compare squares to stay exact
        near = (delta**2).sum(axis=-1) <= Fraction(spec.tau) ** 2
    codes = np.where(near, 1, 2)
    codes = np.where(grid.image[i] != grid.image[j], 3, codes)
    return np.where(i == j, 0, codes).astype(np.int8)


def triangle_table(a, b, c) -> np.ndarray:
    """``bad[x, y, z]`` is True when d_xz > d_xy + d_yz for the code values."""
    vals = [Fraction(0), Fraction(a), Fraction(b), Fraction(c)]
    bad = np.zeros((4, 4, 4), dtype=bool)
    for x, y, z in itertools.product(range(4), repeat=3):
        bad[x, y, z] = vals[z] > vals[x] + vals[y]
    return bad


def count_triangle_violations(grid: RegionGrid, spec: DistanceSpec, trials, seed=0):
    """Sample ``trials`` region triples; return (violations, first violating triple or None)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.integers(0, len(grid), size=(trials, 3))
    x, y, z = idx.T
    bad = triangle_table(spec.a, spec.b, spec.c)[
        piecewise_codes(grid, x, y, spec),
        piecewise_codes(grid, y, z, spec),
        piecewise_codes(grid, x, z, spec),
    ]
    hits = np.flatnonzero(bad)
    first = tuple(grid.region_id(int(k)) for k in idx[hits[0]]) if hits.size else None
    return int(hits.size), first


def find_counterexample(grid: RegionGrid, spec: DistanceSpec):
    """Exhaustive search for a triple breaking the triangle inequality, or None."""
    bad = triangle_table(spec.a, spec.b, spec.c)
    n = len(grid)
    r = np.arange(n)
    codes = piecewise_codes(grid, r[:, None], r[None, :], spec)
    viol = bad[codes[:, :, None], codes[None, :, :], codes[:, None, :]]
    hits = np.argwhere(viol)
    if hits.size == 0:
        return None
    return tuple(grid.region_id(int(k)) for k in hits[0])


def validate_metric(a, b, c, tau=128.0, p_norm=math.inf, region_size=128,
                    image_shape=(1024, 2048), trials=100_000, seed=0):
    """Report on whether the piece-wise distance with (a, b, c) is a metric."""
    from .regions import build_grid

    spec = DistanceSpec(a=a, b=b, c=c, tau=tau, p_norm=p_norm)
    grid = build_grid([image_shape, image_shape], region_size)
    violations, sampled = count_triangle_violations(grid, spec, trials, seed)
    # a small layout is enough to realize every code pattern
    small = build_grid([(4 * region_size, 4 * region_size)] * 2, region_size)
    witness = find_counterexample(small, spec)
    return {
        "a": a, "b": b, "c": c, "tau": tau,
        "p_norm": "inf" if spec.p_norm == math.inf else int(spec.p_norm),
        "conditions_violated": check_metric_conditions(a, b, c),
        "trials": trials,
        "sampled_violations": violations,
        "sampled_example": None if sampled is None else [list(t) for t in sampled],
        "counterexample": None if witness is None else [list(t) for t in witness],
        "is_metric": witness is None and violations == 0 and a > 0 and b > 0 and c > 0,
    }
