"""Region grid over an image catalog and the labeled/unlabeled pool state.

Regions are addressed by :class:`RegionId` and stored in lexicographic
``(image_index, row, col)`` order, so the position of a region in the grid
arrays doubles as its tie-break rank everywhere else in the package.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyBatchWarning, InvalidInputError

UNLABELED = 0
LABELED = 1
BATCH = 2


class RegionId(NamedTuple):
    image_index: int
    row: int
    col: int


@dataclass(frozen=True, eq=False)
class RegionGrid:
    """Immutable tiling of every catalog image into ``region_size`` squares.

    Border tiles are clipped to the image bounds; ``heights``/``widths`` hold
    the actual pixel extent of each region.
    """

    region_size: int
    images: tuple  # ((image_index, height, width), ...) sorted by index
    image: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    heights: np.ndarray
    widths: np.ndarray
    _offsets: dict = field(repr=False)
    _lookup: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.image)

    # the catalog and region size determine every array
    def __eq__(self, other):
        return (isinstance(other, RegionGrid) and other.region_size == self.region_size
                and other.images == self.images)

    def __hash__(self):
        return hash((self.region_size, self.images))

    @property
    def n_regions(self):
        return len(self.image)

    @property
    def centers(self):
        """Integer region centers, shape (n, 2): top-left + extent // 2."""
        return np.stack(
            [self.rows + self.heights // 2, self.cols + self.widths // 2], axis=1
        )

    @property
    def pixel_counts(self):
        return self.heights * self.widths

    def image_dims(self, image_index):
        for idx, h, w in self.images:
            if idx == image_index:
                return h, w
        raise InvalidInputError(f"image {image_index} is not in the catalog")

    def image_slice(self, image_index) -> slice:
        try:
            return self._offsets[image_index]
        except KeyError:
            raise InvalidInputError(f"image {image_index} is not in the catalog") from None

    def region_id(self, i) -> RegionId:
        return RegionId(int(self.image[i]), int(self.rows[i]), int(self.cols[i]))

    def region_ids(self, indices=None):
        if indices is None:
            indices = range(len(self))
        return [self.region_id(i) for i in indices]

    def index_of(self, rid) -> int:
        if not self._lookup:
            self._lookup.update(
                ((int(m), int(r), int(c)), i)
                for i, (m, r, c) in enumerate(zip(self.image, self.rows, self.cols))
            )
        try:
            return self._lookup[tuple(int(v) for v in rid)]
        except KeyError:
            raise InvalidInputError(f"{tuple(rid)} is not a region of this grid") from None

    def tiles_per_axis(self, image_index):
        h, w = self.image_dims(image_index)
        n = self.region_size
        return math.ceil(h / n), math.ceil(w / n)


def build_grid(catalog: Sequence, region_size: int) -> RegionGrid:
    """Tile each image of ``catalog`` into non-overlapping ``region_size`` squares.

    ``catalog`` items are ``(height, width)`` (image index = position) or
    ``(image_index, height, width)``.
    """
    if int(region_size) < 1:
        raise InvalidInputError(f"region_size must be >= 1, got {region_size}")
    n = int(region_size)
    images = []
    for pos, entry in enumerate(catalog):
        if len(entry) == 2:
            idx, (h, w) = pos, entry
        elif len(entry) == 3:
            idx, h, w = entry
        else:
            raise InvalidInputError(f"catalog entry {entry!r} is not (h, w) or (index, h, w)")
        if int(h) < 1 or int(w) < 1:
            raise InvalidInputError(f"image {idx} has zero size ({h}x{w})")
        images.append((int(idx), int(h), int(w)))
    images.sort()
    if len({idx for idx, _, _ in images}) != len(images):
        raise InvalidInputError("duplicate image_index in catalog")

    parts = {k: [] for k in ("image", "rows", "cols", "heights", "widths")}
    offsets = {}
    start = 0
    for idx, h, w in images:
        r0 = np.arange(0, h, n, dtype=np.int64)
        c0 = np.arange(0, w, n, dtype=np.int64)
        rr, cc = np.meshgrid(r0, c0, indexing="ij")
        rr, cc = rr.ravel(), cc.ravel()
        parts["image"].append(np.full(rr.size, idx, dtype=np.int64))
        parts["rows"].append(rr)
        parts["cols"].append(cc)
        parts["heights"].append(np.minimum(n, h - rr))
        parts["widths"].append(np.minimum(n, w - cc))
        offsets[idx] = slice(start, start + rr.size)
        start += rr.size

    arrays = {k: np.concatenate(v) if v else np.zeros(0, np.int64) for k, v in parts.items()}
    for a in arrays.values():
        a.setflags(write=False)
    return RegionGrid(region_size=n, images=tuple(images), _offsets=offsets, **arrays)


def batch_schedule(t: int, base: int) -> int:
    """Number of regions acquired at iteration ``t``; cumulative total is ``2**t * base``."""
    if t < 0 or base < 1:
        raise InvalidInputError(f"need t >= 0 and base >= 1, got t={t}, base={base}")
    if t == 0:
        return base
    return (2**t - 2 ** (t - 1)) * base


class PoolState:
    """Partition of the grid into labeled, current-batch and unlabeled regions.

    Backed by a per-region status array so the three sets are disjoint and
    cover the grid by construction. Instances are treated as values: every
    mutating operation returns a new state.
    """

    def __init__(self, grid: RegionGrid, status=None, batch=(), iteration=0):
        self.grid = grid
        if status is None:
            status = np.zeros(len(grid), dtype=np.int8)
        self.status = np.asarray(status, dtype=np.int8).copy()
        self.status.setflags(write=False)
        self.batch = tuple(int(i) for i in batch)
        self.iteration = int(iteration)
        if self.status.shape != (len(grid),):
            raise InvalidInputError("status array does not match grid size")
        if len(set(self.batch)) != len(self.batch):
            raise InvalidInputError("batch contains duplicates")
        in_batch = np.flatnonzero(self.status == BATCH)
        if sorted(self.batch) != in_batch.tolist():
            raise InvalidInputError("batch order list disagrees with status array")

    def labeled_indices(self):
        return np.flatnonzero(self.status == LABELED)

    def unlabeled_indices(self):
        return np.flatnonzero(self.status == UNLABELED)

    def selected_mask(self):
        """Mask of L_t ∪ B_t."""
        return self.status != UNLABELED

    @property
    def labeled(self):
        return set(self.grid.region_ids(self.labeled_indices()))

    @property
    def unlabeled(self):
        return set(self.grid.region_ids(self.unlabeled_indices()))

    @property
    def batch_ids(self):
        return self.grid.region_ids(self.batch)

    @property
    def n_labeled(self):
        return int(np.count_nonzero(self.status == LABELED))

    @property
    def n_unlabeled(self):
        return int(np.count_nonzero(self.status == UNLABELED))

    def with_batch(self, indices) -> "PoolState":
        """Return a state whose batch is ``indices`` (taken from U_t), in order."""
        indices = [int(i) for i in indices]
        status = self.status.copy()
        status[status == BATCH] = UNLABELED
        if indices and np.any(status[indices] != UNLABELED):
            raise InvalidInputError("batch regions must come from the unlabeled set")
        status[indices] = BATCH
        return PoolState(self.grid, status, indices, self.iteration)

    def __eq__(self, other):
        return (
            isinstance(other, PoolState)
            and other.grid == self.grid
            and np.array_equal(other.status, self.status)
            and other.batch == self.batch
            and other.iteration == self.iteration
        )

    def __repr__(self):
        return (
            f"PoolState(t={self.iteration}, labeled={self.n_labeled}, "
            f"batch={len(self.batch)}, unlabeled={self.n_unlabeled})"
        )


def init_labeled_pool(grid: RegionGrid, count: int, seed: int) -> PoolState:
    """Label ``count`` regions drawn uniformly without replacement (PCG64 seeded by ``seed``)."""
    if count < 0 or count > len(grid):
        raise InvalidInputError(
            f"cannot label {count} regions from a grid of {len(grid)}"
        )
    rng = np.random.Generator(np.random.PCG64(seed))
    picks = rng.choice(len(grid), size=count, replace=False)
    status = np.zeros(len(grid), dtype=np.int8)
    status[picks] = LABELED
    return PoolState(grid, status, (), 0)


def commit_batch(state: PoolState) -> PoolState:
    """Move the batch into the labeled set and advance the iteration.

    An empty batch is a no-op that emits :class:`EmptyBatchWarning`.
    """
    if not state.batch:
        warnings.warn("commit_batch called with an empty batch", EmptyBatchWarning, stacklevel=2)
        return state
    status = state.status.copy()
    status[status == BATCH] = LABELED
    return PoolState(state.grid, status, (), state.iteration + 1)
