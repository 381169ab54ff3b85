"""Region feature pooling and PCA by covariance eigendecomposition."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePcaWarning, InvalidInputError
from .regions import RegionGrid
from .scoring import region_means


def pool_region_features(feature_map, grid: RegionGrid, image_index) -> np.ndarray:
    """Per-channel mean of a D x H x W map over each region of one image -> (n, D)."""
    feature_map = np.asarray(feature_map)
    if feature_map.ndim != 3:
        raise InvalidInputError(f"feature map must be D x H x W, got {feature_map.shape}")
    if not np.all(np.isfinite(feature_map)):
        raise InvalidInputError("feature map has non-finite entries")
    return region_means(feature_map, grid, image_index)


def pool_all(feature_maps, grid: RegionGrid) -> np.ndarray:
    """Stack pooled features of every catalog image in grid order."""
    out = None
    for idx, _, _ in grid.images:
        pooled = pool_region_features(feature_maps[idx], grid, idx)
        if out is None:
            out = np.empty((len(grid), pooled.shape[1]), dtype=np.float64)
        out[grid.image_slice(idx)] = pooled
    return out


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (K, D), orthonormal rows
    explained_variance: np.ndarray
    status: str = "ok"

    @property
    def n_components(self):
        return self.components.shape[0]


def fit_pca(matrix, target_dim: int) -> PcaModel:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidInputError("PCA needs a 2-D matrix with at least two rows")
    n, d = x.shape
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    # eigh is ascending; stable sort keeps component-index order among ties
    order = np.argsort(-evals, kind="stable")
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T

    # fixed sign: largest-magnitude entry positive
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(d), pivot])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]

    status = "ok"
    k_avail = min(target_dim, d)
    comps = comps[:k_avail]
    evals = evals[:k_avail]
    tol = max(evals[0] if k_avail else 0.0, 1.0) * d * np.finfo(np.float64).eps * 10
    small = evals <= tol
    if small.any() or target_dim > min(n, d):
        status = "degenerate"
        evals = np.where(small, 0.0, evals)
    if target_dim > d:
        comps = np.vstack([comps, np.zeros((target_dim - d, d))])
        evals = np.concatenate([evals, np.zeros(target_dim - d)])
    if status != "ok":
        warnings.warn(
            f"PCA target dimension {target_dim} exceeds the data rank; "
            "padding with zero-variance components",
            DegeneratePcaWarning,
            stacklevel=2,
        )
    return PcaModel(mean=mean, components=comps, explained_variance=evals, status=status)


def pca_project(model: PcaModel, matrix) -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise InvalidInputError(
            f"input dimension {x.shape[-1]} != model dimension {model.mean.shape[0]}"
        )
    return (x - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, scores) -> np.ndarray:
    return np.asarray(scores) @ model.components + model.mean
