"""File formats: binary tensors, region features, pool state, manifests, run config.

Binary layouts are little-endian::

    posterior / feature map:  magic(4) u32 version  u32 C  u32 H  u32 W  f32[C*H*W]
    region features:          magic(4) u32 version  u32 n  u32 D
                              n * (u32 image  u32 row  u32 col  f32[D])

Magic is ``RALP`` for posteriors, ``RALM`` for feature maps and ``RALF``
for pooled region features. Decoding requires the exact payload length.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError
from .regions import BATCH, LABELED, PoolState, RegionGrid, build_grid
from .scoring import NORMALIZATION_EPS, PosteriorTensor
from .selection import SelectionConfig, SelectionResult

VERSION = 1
POSTERIOR_MAGIC = b"RALP"
FEATURE_MAP_MAGIC = b"RALM"
REGION_FEATURE_MAGIC = b"RALF"
_HDR = struct.Struct("<4sIIII")
_RF_HDR = struct.Struct("<4sIII")
_RF_KEY = np.dtype([("image", "<u4"), ("row", "<u4"), ("col", "<u4")])


def atomic_write(path, data, mode="wb"):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


# ------------------------------------------------------------ dense tensors


def encode_tensor(values, magic=POSTERIOR_MAGIC) -> bytes:
    values = np.asarray(values)
    if values.ndim != 3:
        raise InvalidInputError(f"tensor must be 3-D, got shape {values.shape}")
    c, h, w = values.shape
    body = np.ascontiguousarray(values, dtype="<f4").tobytes()
    return _HDR.pack(magic, VERSION, c, h, w) + body


def decode_tensor(data: bytes, magic=POSTERIOR_MAGIC) -> np.ndarray:
    data = bytes(data)
    if len(data) < 4:
        raise FormatError("truncated", "file shorter than magic", offset=len(data))
    if data[:4] != magic:
        raise FormatError("bad_magic", "unexpected magic", offset=0, expected=magic, found=data[:4])
    if len(data) < _HDR.size:
        raise FormatError("truncated", "header truncated", offset=len(data),
                          expected=_HDR.size, found=len(data))
    _, version, c, h, w = _HDR.unpack_from(data)
    if version != VERSION:
        raise FormatError("bad_version", "unsupported version", offset=4,
                          expected=VERSION, found=version)
    if c == 0 or h == 0 or w == 0:
        raise FormatError("bad_header", f"zero dimension in header ({c}, {h}, {w})", offset=8)
    expected = _HDR.size + 4 * c * h * w
    if len(data) < expected:
        raise FormatError("truncated", "payload truncated", offset=len(data),
                          expected=expected, found=len(data))
    if len(data) > expected:
        raise FormatError("trailing_bytes", "bytes after payload", offset=expected,
                          expected=expected, found=len(data))
    return np.frombuffer(data, dtype="<f4", offset=_HDR.size).reshape(c, h, w).astype(np.float64)


def _check_posterior(values):
    if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
        raise FormatError("out_of_range", "posterior values outside [0, 1]")
    sums = values.sum(axis=0)
    bad = np.abs(sums - 1.0) > NORMALIZATION_EPS
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise FormatError("not_normalized",
                          f"class probabilities at pixel ({r}, {c}) sum to {sums[r, c]:.6f}")


def decode_posterior(data: bytes, image_index=0) -> PosteriorTensor:
    values = decode_tensor(data, POSTERIOR_MAGIC)
    _check_posterior(values)
    return PosteriorTensor(image_index, values)


def read_posterior_file(path, image_index=0) -> PosteriorTensor:
    return decode_posterior(Path(path).read_bytes(), image_index)


def write_posterior_file(path, values):
    atomic_write(path, encode_tensor(values, POSTERIOR_MAGIC))


def read_feature_map_file(path) -> np.ndarray:
    values = decode_tensor(Path(path).read_bytes(), FEATURE_MAP_MAGIC)
    if not np.all(np.isfinite(values)):
        raise FormatError("non_finite", "feature map has non-finite values")
    return values


def write_feature_map_file(path, values):
    atomic_write(path, encode_tensor(values, FEATURE_MAP_MAGIC))


# ---------------------------------------------------------- region features


def encode_region_features(keys, matrix) -> bytes:
    matrix = np.asarray(matrix)
    n, d = matrix.shape
    if len(keys) != n:
        raise InvalidInputError("one key per feature row is required")
    rec = np.dtype([("key", _RF_KEY), ("vec", "<f4", (d,))])
    arr = np.empty(n, dtype=rec)
    arr["key"] = [tuple(int(v) for v in k) for k in keys]
    arr["vec"] = matrix
    return _RF_HDR.pack(REGION_FEATURE_MAGIC, VERSION, n, d) + arr.tobytes()


def decode_region_features(data: bytes):
    """Return ``(keys, matrix)`` with keys as (image, row, col) tuples."""
    data = bytes(data)
    if data[:4] != REGION_FEATURE_MAGIC:
        raise FormatError("bad_magic", "unexpected magic", offset=0,
                          expected=REGION_FEATURE_MAGIC, found=data[:4])
    if len(data) < _RF_HDR.size:
        raise FormatError("truncated", "header truncated", offset=len(data),
                          expected=_RF_HDR.size, found=len(data))
    _, version, n, d = _RF_HDR.unpack_from(data)
    if version != VERSION:
        raise FormatError("bad_version", "unsupported version", offset=4,
                          expected=VERSION, found=version)
    if d == 0:
        raise FormatError("bad_header", "feature dimension is zero", offset=12)
    rec = np.dtype([("key", _RF_KEY), ("vec", "<f4", (d,))])
    expected = _RF_HDR.size + n * rec.itemsize
    if len(data) < expected:
        raise FormatError("truncated", "payload truncated", offset=len(data),
                          expected=expected, found=len(data))
    if len(data) > expected:
        raise FormatError("trailing_bytes", "bytes after payload", offset=expected,
                          expected=expected, found=len(data))
    arr = np.frombuffer(data, dtype=rec, count=n, offset=_RF_HDR.size)
    keys = [tuple(int(v) for v in k) for k in arr["key"]]
    return keys, arr["vec"].astype(np.float64)


def write_region_features(path, grid: RegionGrid, matrix):
    keys = list(zip(grid.image.tolist(), grid.rows.tolist(), grid.cols.tolist()))
    atomic_write(path, encode_region_features(keys, matrix))


def read_region_features(path, grid: RegionGrid = None):
    """Read a region-feature file; with ``grid`` the rows are reordered to grid order."""
    keys, matrix = decode_region_features(Path(path).read_bytes())
    if grid is None:
        return keys, matrix
    out = np.full((len(grid), matrix.shape[1]), np.nan)
    for key, row in zip(keys, matrix):
        out[grid.index_of(key)] = row
    if np.isnan(out).any():
        raise FormatError("missing_regions", "feature file does not cover every grid region")
    return out


# ------------------------------------------------------------- JSON documents


def read_index(path):
    """Sidecar index ``{"files": [{"image_index", "path"}]}``; returns image_index -> Path."""
    path = Path(path)
    doc = json.loads(path.read_text())
    out = {}
    for entry in doc["files"]:
        p = Path(entry["path"])
        out[int(entry["image_index"])] = p if p.is_absolute() else path.parent / p
    return out


def write_index(path, files, fmt="RALP"):
    doc = {
        "format": fmt,
        "version": VERSION,
        "files": [{"image_index": int(i), "path": str(p)} for i, p in sorted(files.items())],
    }
    atomic_write(path, json.dumps(doc, indent=2) + "\n", mode="w")


def pool_to_dict(state: PoolState) -> dict:
    grid = state.grid
    labeled = np.flatnonzero(state.status == LABELED)
    doc = {
        "region_size": grid.region_size,
        "images": [{"index": i, "h": h, "w": w} for i, h, w in grid.images],
        "labeled": [list(grid.region_id(i)) for i in labeled],
        "iteration": state.iteration,
    }
    if state.batch:
        doc["batch"] = [list(grid.region_id(i)) for i in state.batch]
    return doc


def pool_from_dict(doc) -> PoolState:
    grid = build_grid([(e["index"], e["h"], e["w"]) for e in doc["images"]], doc["region_size"])
    status = np.zeros(len(grid), dtype=np.int8)
    for rid in doc.get("labeled", []):
        status[grid.index_of(rid)] = LABELED
    batch = [grid.index_of(rid) for rid in doc.get("batch", [])]
    if batch and np.any(status[batch] == LABELED):
        raise FormatError("overlap", "batch regions are also labeled")
    status[batch] = BATCH
    return PoolState(grid, status, batch, doc.get("iteration", 0))


def save_pool(path, state: PoolState):
    atomic_write(path, json.dumps(pool_to_dict(state)) + "\n", mode="w")


def load_pool(path) -> PoolState:
    return pool_from_dict(json.loads(Path(path).read_text()))


MANIFEST_FIELDS = ("batch_index", "pick_index", "image", "row", "col",
                   "potential", "u_term", "d_term", "method")


def manifest_records(result: SelectionResult, batch_index=0):
    grid = result.grid
    for k, pick in enumerate(result.picks):
        rid = grid.region_id(pick.index)
        yield {
            "batch_index": batch_index,
            "pick_index": k,
            "image": rid.image_index,
            "row": rid.row,
            "col": rid.col,
            "potential": pick.potential,
            "u_term": pick.u_term,
            "d_term": pick.d_term,
            "method": result.method,
        }


def write_selection_manifest(result: SelectionResult, path, batch_index=0):
    lines = [json.dumps(rec) for rec in manifest_records(result, batch_index)]
    atomic_write(path, "".join(line + "\n" for line in lines), mode="w")


def read_selection_manifest(path):
    records = []
    for n, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        rec = json.loads(line)
        missing = [k for k in MANIFEST_FIELDS if k not in rec]
        if missing:
            raise FormatError("bad_record", f"line {n + 1} lacks {missing}")
        records.append(rec)
    return records


@dataclass
class RunConfig:
    pool: str | None = None
    posterior_index: str | None = None
    features: str | None = None
    output: str | None = None
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    region_size: int = 128
    base: int = 1000
    seed: int = 0

    def to_dict(self):
        return {
            "paths": {
                "pool": self.pool,
                "posterior_index": self.posterior_index,
                "features": self.features,
                "output": self.output,
            },
            "selection": self.selection.to_dict(),
            "region_size": self.region_size,
            "base": self.base,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        paths = d.get("paths", {})
        return cls(
            pool=paths.get("pool"),
            posterior_index=paths.get("posterior_index"),
            features=paths.get("features"),
            output=paths.get("output"),
            selection=SelectionConfig.from_dict(d.get("selection", {})),
            region_size=int(d.get("region_size", 128)),
            base=int(d.get("base", 1000)),
            seed=int(d.get("seed", 0)),
        )

    def check_paths(self):
        for key in ("pool", "posterior_index", "features"):
            p = getattr(self, key)
            if p is not None and not Path(p).exists():
                raise InvalidInputError(f"{key} path {p} does not exist")


def load_run_config(path) -> RunConfig:
    cfg = RunConfig.from_dict(json.loads(Path(path).read_text()))
    cfg.check_paths()
    return cfg


def save_run_config(path, cfg: RunConfig):
    atomic_write(path, json.dumps(cfg.to_dict(), indent=2) + "\n", mode="w")
