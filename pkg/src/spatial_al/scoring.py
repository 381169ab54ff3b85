"""Per-pixel entropy and per-region uncertainty scores."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .regions import RegionGrid

NORMALIZATION_EPS = 1e-4


@dataclass
class PosteriorTensor:
    image_index: int
    values: np.ndarray  # (C, H, W)

    @property
    def num_classes(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]


def validate_posterior(values, eps=NORMALIZATION_EPS):
    values = np.asarray(values)
    if values.ndim != 3:
        raise InvalidInputError(f"posterior must be C x H x W, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("posterior contains non-finite values")
    bad = (values < 0) | (values > 1)
    if bad.any():
        c, r, col = np.argwhere(bad)[0]
        raise InvalidInputError(
            f"posterior value {values[c, r, col]!r} outside [0, 1] at class {c}, pixel ({r}, {col})"
        )
    totals = values.sum(axis=0, dtype=np.float64)
    off = np.abs(totals - 1.0) > eps
    if off.any():
        r, col = np.argwhere(off)[0]
        raise InvalidInputError(
            f"posterior at pixel ({r}, {col}) sums to {totals[r, col]:.6f}, not 1"
        )


def pixel_entropy(posterior) -> np.ndarray:
    """H x W map of -sum_c p log p in nats (0 log 0 = 0)."""
    values = posterior.values if isinstance(posterior, PosteriorTensor) else posterior
    validate_posterior(values)
    p = np.asarray(values, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    ent = -terms.sum(axis=0)
    return np.clip(ent, 0.0, math.log(p.shape[0]))


def region_means(pixel_map, grid: RegionGrid, image_index) -> np.ndarray:
    """Mean of ``pixel_map`` (``(..., H, W)``) over each region's actual pixels.

    Returns shape ``(n_regions_in_image, ...)``.
    """
    h, w = grid.image_dims(image_index)
    pixel_map = np.asarray(pixel_map, dtype=np.float64)
    if pixel_map.shape[-2:] != (h, w):
        raise InvalidInputError(
            f"map is {pixel_map.shape[-2:]} but image {image_index} is {(h, w)}"
        )
    n = grid.region_size
    sums = np.add.reduceat(pixel_map, np.arange(0, h, n), axis=-2)
    sums = np.add.reduceat(sums, np.arange(0, w, n), axis=-1)
    sl = grid.image_slice(image_index)
    counts = (grid.heights[sl] * grid.widths[sl]).astype(np.float64)
    # (..., R, Cc) -> (R*Cc, ...), rows-major matches grid order
    flat = sums.reshape(sums.shape[:-2] + (-1,))
    flat = np.moveaxis(flat, -1, 0)
    return flat / counts.reshape((-1,) + (1,) * (flat.ndim - 1))


@dataclass
class ScoreTable:
    """Raw (nats) and normalized uncertainty per grid region, aligned with grid order.

    ``normalized = clip((raw - offset) / scale, 0, 1)``; the default is
    ``offset=0, scale=ln C``.
    """

    raw: np.ndarray
    normalized: np.ndarray
    scale: float
    offset: float = 0.0

    @classmethod
    def from_raw(cls, raw, num_classes=None, scale=None, offset=0.0):
        if scale is None:
            if num_classes is None or num_classes < 2:
                raise InvalidInputError("need num_classes >= 2 or an explicit scale")
            scale = math.log(num_classes)
        raw = np.asarray(raw, dtype=np.float64)
        norm = np.clip((raw - offset) / scale, 0.0, 1.0)
        return cls(raw=raw, normalized=norm, scale=float(scale), offset=float(offset))

    def __len__(self):
        return len(self.raw)

    def affine(self, alpha, beta):
        """Raw scores mapped by ``alpha*u + beta`` with the matching normalizer."""
        if alpha <= 0:
            raise InvalidInputError("alpha must be positive")
        return ScoreTable.from_raw(
            alpha * self.raw + beta, scale=alpha * self.scale, offset=alpha * self.offset + beta
        )


def region_uncertainty(entropy_map, grid: RegionGrid, image_index, num_classes):
    """Mean entropy per region of one image; returns (raw, normalized) arrays."""
    raw = region_means(entropy_map, grid, image_index)
    return raw, np.clip(raw / math.log(num_classes), 0.0, 1.0)


def score_pool(posteriors, grid: RegionGrid) -> ScoreTable:
    """Build the full ScoreTable from one posterior per catalog image.

    ``posteriors`` maps image_index -> PosteriorTensor or C x H x W array.
    """
    raw = np.empty(len(grid), dtype=np.float64)
    num_classes = None
    seen = set()
    for idx, _, _ in grid.images:
        if idx not in posteriors:
            raise InvalidInputError(f"no posterior for image {idx}")
        post = posteriors[idx]
        values = post.values if isinstance(post, PosteriorTensor) else post
        c = values.shape[0]
        if num_classes is None:
            num_classes = c
        elif c != num_classes:
            raise InvalidInputError("posteriors disagree on the number of classes")
        raw[grid.image_slice(idx)] = region_means(pixel_entropy(values), grid, idx)
        seen.add(idx)
    return ScoreTable.from_raw(raw, num_classes)
