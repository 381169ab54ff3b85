"""Desk-scale active-learning simulator.

Synthetic class-imbalanced segmentation scenes, a nearest-centroid soft
classifier standing in for the segmentation network, mIoU evaluation and
the outer select -> label -> retrain loop.
"""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateModelWarning, InvalidInputError
from .features import fit_pca, pca_project, pool_all
from .regions import (
    LABELED,
    PoolState,
    batch_schedule,
    build_grid,
    commit_batch,
    init_labeled_pool,
)
from .scoring import ScoreTable, pixel_entropy, region_means
from .selection import MAX_MIN, MAX_SUM, greedy_select, preset

IMBALANCED = "imbalanced_scenes"
RARE_SPREAD = 0.5
DOMINANT = "dominant_objects"


@dataclass
class SyntheticDatasetSpec:
    num_train_images: int = 40
    num_eval_images: int = 20
    image_size: tuple = (128, 128)
    num_classes: int = 8
    class_layout: str = IMBALANCED
    feature_dim: int = 8
    noise_sigma: float = 0.2
    seed: int = 0
    # share of the noise variance that is constant within one object instance
    instance_share: float = 0.8
    # distance between class prototypes, in noise-free feature units
    prototype_scale: float = 1.0

    def __post_init__(self):
        self.image_size = tuple(int(v) for v in self.image_size)
        if self.num_classes < 2:
            raise InvalidInputError("need at least two classes")
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be non-negative")
        if self.class_layout not in (IMBALANCED, DOMINANT):
            raise InvalidInputError(f"unknown class_layout {self.class_layout!r}")
        if not 0 <= self.instance_share <= 1:
            raise InvalidInputError("instance_share must lie in [0, 1]")


@dataclass
class SyntheticSplit:
    labels: np.ndarray    # (N, H, W) int
    features: np.ndarray  # (N, D, H, W) float64

    def __len__(self):
        return self.labels.shape[0]


@dataclass
class SyntheticDataset:
    spec: SyntheticDatasetSpec
    prototypes: np.ndarray  # (C, D)
    train: SyntheticSplit
    eval: SyntheticSplit


# ------------------------------------------------------------------ layouts


def _disc(mask_shape, cy, cx, ry, rx):
    h, w = mask_shape
    yy, xx = np.ogrid[:h, :w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _imbalanced_scene(rng, h, w, c):
    """Horizontal bands of three common classes, mid-size boxes, rare small blobs.

    Returns the label map and ``(class, mask)`` per object instance; masks may
    include pixels later painted over by another object.
    """
    labels = np.empty((h, w), dtype=np.int64)
    instances = []
    # wavy band boundaries: sky / building / road
    xs = np.arange(w)
    b1 = (h * rng.uniform(0.25, 0.4) + h * 0.05 * np.sin(xs / w * 2 * np.pi * rng.uniform(0.5, 2)
                                                       + rng.uniform(0, 2 * np.pi))).astype(int)
    b2 = (h * rng.uniform(0.6, 0.75) + h * 0.04 * np.sin(xs / w * 2 * np.pi * rng.uniform(0.5, 2)
                                                        + rng.uniform(0, 2 * np.pi))).astype(int)
    yy = np.arange(h)[:, None]
    labels[:] = np.where(yy < b1[None, :], 0, np.where(yy < b2[None, :], 1, 2))
    for k in range(3):
        instances.append((k, labels == k))
    n_common = min(3, c)
    labels = np.minimum(labels, n_common - 1)
    if c <= 3:
        return labels, instances

    # class 3: a few mid-size boxes (cars) in most images
    mid = 3
    for _ in range(rng.integers(1, 4)):
        bh, bw = rng.integers(h // 16, h // 7), rng.integers(w // 10, w // 5)
        y0 = rng.integers(int(h * 0.55), h - bh)
        x0 = rng.integers(0, w - bw)
        m = np.zeros((h, w), bool)
        m[y0:y0 + bh, x0:x0 + bw] = True
        labels[m] = mid
        instances.append((mid, m))
    # rare classes: small blobs in a minority of images, rarer as the index grows
    for cls in range(4, c):
        frac = max(0.5 - 0.08 * (cls - 4), 0.15)
        if rng.random() >= frac:
            continue
        for _ in range(rng.integers(1, 3)):
            r = rng.integers(max(2, h // 40), max(3, h // 18))
            cy, cx = rng.integers(r, h - r), rng.integers(r, w - r)
            m = _disc((h, w), cy, cx, r, r * rng.uniform(0.6, 1.4))
            labels[m] = cls
            instances.append((cls, m))
    return labels, instances


def _dominant_scene(rng, h, w, c):
    """Background (class 0) with one to three large objects."""
    labels = np.zeros((h, w), dtype=np.int64)
    instances = [(0, np.ones((h, w), bool))]
    for _ in range(rng.integers(1, 4)):
        cls = int(rng.integers(1, c))
        ry, rx = rng.uniform(0.15, 0.35) * h, rng.uniform(0.15, 0.35) * w
        cy, cx = rng.uniform(ry, h - ry), rng.uniform(rx, w - rx)
        m = _disc((h, w), cy, cx, ry, rx)
        labels[m] = cls
        instances.append((cls, m))
    return labels, instances


def _prototypes(rng, spec):
    c, d = spec.num_classes, spec.feature_dim
    protos = rng.normal(size=(c, d))
    protos -= protos.mean(axis=0)
    norms = np.linalg.norm(protos, axis=1, keepdims=True)
    protos = protos / np.where(norms > 0, norms, 1.0)
    if spec.class_layout == IMBALANCED and c > 4:
        # rare classes sit between the common ones: hard to tell apart until labeled
        common = protos[:4].mean(axis=0)
        protos[4:] = RARE_SPREAD * protos[4:] + (1 - RARE_SPREAD) * common
    return protos * spec.prototype_scale


def _make_split(rng, spec, prototypes, count):
    h, w = spec.image_size
    d = spec.feature_dim
    labels = np.empty((count, h, w), dtype=np.int64)
    feats = np.empty((count, d, h, w), dtype=np.float64)
    layout = _imbalanced_scene if spec.class_layout == IMBALANCED else _dominant_scene
    s_inst = spec.noise_sigma * math.sqrt(spec.instance_share)
    s_pix = spec.noise_sigma * math.sqrt(1.0 - spec.instance_share)
    for i in range(count):
        lab, instances = layout(rng, h, w, spec.num_classes)
        labels[i] = lab
        f = prototypes[lab].transpose(2, 0, 1).copy()
        # instance offsets are drawn for every object even if later overpainted
        offsets = rng.normal(size=(len(instances), d))
        pix = rng.normal(size=(d, h, w))
        if spec.noise_sigma > 0:
            for (cls, m), off in zip(instances, offsets):
                visible = m & (lab == cls)
                f[:, visible] += s_inst * off[:, None]
            f += s_pix * pix
        feats[i] = f
    return SyntheticSplit(labels, feats)


def generate_synthetic_dataset(spec: SyntheticDatasetSpec) -> SyntheticDataset:
    """Deterministic in ``spec``: train and eval splits use independent PCG64 streams."""
    root = np.random.SeedSequence(spec.seed)
    s_proto, s_train, s_eval = root.spawn(3)
    prototypes = _prototypes(np.random.Generator(np.random.PCG64(s_proto)), spec)
    train = _make_split(np.random.Generator(np.random.PCG64(s_train)), spec, prototypes,
                        spec.num_train_images)
    evals = _make_split(np.random.Generator(np.random.PCG64(s_eval)), spec, prototypes,
                        spec.num_eval_images)
    return SyntheticDataset(spec, prototypes, train, evals)


def class_histogram(labels, num_classes):
    return np.bincount(np.asarray(labels).ravel(), minlength=num_classes)


# --------------------------------------------------------------- toy model

FAR = 1e6


@dataclass
class ToyModel:
    centroids: np.ndarray  # (C, D)
    present: np.ndarray    # (C,) bool
    temperature: float = 1.0
    trained_pixel_count: int = 0
    degenerate: bool = False

    @property
    def num_classes(self):
        return self.centroids.shape[0]


def labeled_pixel_mask(grid, state_or_indices, image_count, h, w):
    if isinstance(state_or_indices, PoolState):
        indices = np.flatnonzero(state_or_indices.status == LABELED)
    else:
        indices = np.asarray(list(state_or_indices), dtype=np.int64)
    mask = np.zeros((image_count, h, w), dtype=bool)
    for i in indices:
        r, c = grid.rows[i], grid.cols[i]
        mask[grid.image[i], r:r + grid.heights[i], c:c + grid.widths[i]] = True
    return mask


def train_toy_model(mask, split: SyntheticSplit, num_classes, temperature=1.0) -> ToyModel:
    """Class centroids of the labeled pixels; classes never labeled are never predicted."""
    if temperature <= 0:
        raise InvalidInputError("temperature must be positive")
    d = split.features.shape[1]
    labels = split.labels[mask]
    feats = np.moveaxis(split.features, 1, -1)[mask]  # (P, D)
    sums = np.zeros((num_classes, d))
    np.add.at(sums, labels, feats)
    counts = np.bincount(labels, minlength=num_classes)
    present = counts > 0
    centroids = np.full((num_classes, d), FAR)
    centroids[present] = sums[present] / counts[present, None]
    degenerate = present.sum() < 2
    if degenerate:
        warnings.warn(
            f"only {int(present.sum())} class(es) labeled; model outputs uniform posteriors",
            DegenerateModelWarning,
            stacklevel=2,
        )
    return ToyModel(centroids, present, float(temperature), int(mask.sum()), bool(degenerate))


def predict_posteriors(model: ToyModel, feature_map) -> np.ndarray:
    """C x H x W softmax over -||f - centroid||^2 / temperature."""
    f = np.asarray(feature_map, dtype=np.float64)
    d, h, w = f.shape
    c = model.num_classes
    if model.degenerate:
        return np.full((c, h, w), 1.0 / c)
    flat = f.reshape(d, -1)
    logits = np.full((c, flat.shape[1]), -np.inf)
    for k in np.flatnonzero(model.present):
        diff = flat - model.centroids[k][:, None]
        logits[k] = -np.einsum("ij,ij->j", diff, diff) / model.temperature
    logits -= logits.max(axis=0, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=0, keepdims=True)
    return p.reshape(c, h, w)


def confusion_matrix(pred, truth, num_classes):
    idx = num_classes * np.asarray(truth).ravel() + np.asarray(pred).ravel()
    return np.bincount(idx, minlength=num_classes**2).reshape(num_classes, num_classes)


def iou_from_confusion(conf):
    """Per-class IoU (NaN for classes absent from prediction and truth) and their mean."""
    conf = np.asarray(conf, dtype=np.float64)
    tp = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    valid = ~np.isnan(iou)
    miou = float(iou[valid].mean()) if valid.any() else float("nan")
    return iou, miou


def evaluate_miou(model: ToyModel, split: SyntheticSplit):
    c = model.num_classes
    conf = np.zeros((c, c), dtype=np.int64)
    for i in range(len(split)):
        pred = predict_posteriors(model, split.features[i]).argmax(axis=0)
        conf += confusion_matrix(pred, split.labels[i], c)
    return iou_from_confusion(conf)


# ----------------------------------------------------------------- AL loop


@dataclass
class LoopConfig:
    iterations: int = 4          # T: batches 0..T
    base: int = 50
    region_size: int = 8
    seed: int = 0
    temperature: float = 1.0
    feature_pca_dim: int | None = None
    spatial_form: str | None = None
    objective: str = MAX_MIN
    tau: float | None = None
    a: float | None = None
    b: float | None = None
    c: float | None = None
    p_norm: str | None = None


@dataclass
class IterationRecord:
    iteration: int
    labeled_regions: int
    pixel_fraction: float
    per_class_iou: list
    miou: float
    images_touched: int
    selection_seconds: float = 0.0


@dataclass
class LoopHistory:
    method: str
    seed: int
    records: list = field(default_factory=list)

    def to_dict(self):
        return {
            "method": self.method,
            "seed": self.seed,
            "records": [
                {**asdict(r), "per_class_iou": [None if (v is None or math.isnan(v)) else v
                                                for v in r.per_class_iou]}
                for r in self.records
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "pixels_pct", "miou", "images_touched"])
        for r in self.records:
            w.writerow([r.iteration, f"{100 * r.pixel_fraction:.4f}", f"{r.miou:.6f}",
                        r.images_touched])
        return buf.getvalue()


def standardize_features(split: SyntheticSplit, stats=None):
    """Zero mean, unit mean-squared-norm features; returns (split, (mean, scale))."""
    if stats is None:
        mean = split.features.mean(axis=(0, 2, 3))
        centered = split.features - mean[None, :, None, None]
        scale = math.sqrt(float((centered**2).sum(axis=1).mean())) or 1.0
        stats = (mean, scale)
    mean, scale = stats
    feats = (split.features - mean[None, :, None, None]) / scale
    return SyntheticSplit(split.labels, feats), stats


def _method_config(method, batch, loop: LoopConfig, seed):
    overrides = {}
    for key in ("spatial_form", "a", "b", "c", "p_norm"):
        v = getattr(loop, key)
        if v is not None:
            overrides[key] = v
    overrides["tau"] = loop.tau if loop.tau is not None else float(loop.region_size)
    return preset(method, batch_size=batch, seed=seed, region_size=loop.region_size,
                  objective=loop.objective, **overrides)


def check_schedule(loop: LoopConfig, n_regions):
    needed = 2**loop.iterations * loop.base
    if needed > n_regions:
        raise ConfigError(
            f"schedule needs {needed} regions after {loop.iterations} batches "
            f"but the pool has {n_regions}"
        )


def run_al_loop(dataset: SyntheticDataset, method: str, loop: LoopConfig) -> LoopHistory:
    """Batch 0 random and shared across methods; later batches from ``method``."""
    spec = dataset.spec
    h, w = spec.image_size
    n_img = len(dataset.train)
    grid = build_grid([(h, w)] * n_img, loop.region_size)
    check_schedule(loop, len(grid))
    train, stats = standardize_features(dataset.train)
    evals, _ = standardize_features(dataset.eval, stats)
    c = spec.num_classes

    pooled = pool_all({i: train.features[i] for i in range(n_img)}, grid)
    if loop.feature_pca_dim:
        pooled = pca_project(fit_pca(pooled, loop.feature_pca_dim), pooled)

    state = init_labeled_pool(grid, loop.base, loop.seed)
    total_pixels = n_img * h * w
    history = LoopHistory(method, loop.seed)
    cache = None
    for t in range(loop.iterations + 1):
        if t > 0:
            k = batch_schedule(t, loop.base)
            cfg = _method_config(method, k, loop, loop.seed * 1000 + t)
            raw = np.empty(len(grid))
            for i in range(n_img):
                ent = pixel_entropy(predict_posteriors(model, train.features[i]))
                raw[grid.image_slice(i)] = region_means(ent, grid, i)
            scores = ScoreTable.from_raw(raw, c)
            result = greedy_select(state, scores, pooled, cfg, cache=cache)
            cache = result.cache
            state = commit_batch(state.with_batch(result.batch))
            sel_seconds = result.wall_time
        else:
            sel_seconds = 0.0
        mask = labeled_pixel_mask(grid, state, n_img, h, w)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateModelWarning)
            model = train_toy_model(mask, train, c, loop.temperature)
        iou, miou = evaluate_miou(model, evals)
        labeled = np.flatnonzero(state.status == LABELED)
        history.records.append(IterationRecord(
            iteration=t,
            labeled_regions=int(labeled.size),
            pixel_fraction=float(mask.sum()) / total_pixels,
            per_class_iou=[float(v) for v in iou],
            miou=miou,
            images_touched=int(np.unique(grid.image[labeled]).size),
            selection_seconds=sel_seconds,
        ))
    return history


def compare_methods(spec: SyntheticDatasetSpec, methods, loop: LoopConfig, seeds):
    """Run every method on every seed; the dataset seed follows the loop seed."""
    out = {}
    for seed in seeds:
        ds = generate_synthetic_dataset(_with_seed(spec, seed))
        for name, (method, overrides) in methods.items():
            cfg = LoopConfig(**{**asdict(loop), **overrides, "seed": seed})
            out[(name, seed)] = run_al_loop(ds, method, cfg)
    return out


def _with_seed(spec, seed):
    d = asdict(spec)
    d["seed"] = seed
    return SyntheticDatasetSpec(**d)


__all__ = [
    "MAX_MIN", "MAX_SUM", "SyntheticDatasetSpec", "generate_synthetic_dataset",
    "train_toy_model", "predict_posteriors", "evaluate_miou", "run_al_loop",
    "LoopConfig", "LoopHistory", "compare_methods",
]
