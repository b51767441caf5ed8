"""Vector dataset loaders: FVECS, BVECS, raw float32 and CSV."""

import csv
import enum
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .io_utils import atomic_write_bytes
from .seeding import stream

NORM_TOL = 1e-6


class DatasetFormat(str, enum.Enum):
    FVECS = "fvecs"
    BVECS = "bvecs"
    RAW_F32 = "raw"
    CSV = "csv"


@dataclass(frozen=True, eq=False)
class DatasetHandle:
    """A memory-resident dataset.

    Attributes:
        path: Source file.
        format: File format.
        vectors: ``(count, dim)`` float64 array, padded when ``pad_to`` was set.
        original_dim: Dimension before zero padding.
        normalized: Whether rows were scaled to unit norm.
        norms: Row norms before normalization.
    """

    path: str
    format: DatasetFormat
    vectors: np.ndarray
    original_dim: int
    normalized: bool
    norms: np.ndarray

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def truncate(self, arr: np.ndarray) -> np.ndarray:
        """Drop padding coordinates from reconstructions."""
        return np.asarray(arr)[..., : self.original_dim]


def _read_vecs(data: bytes, item: np.dtype, path: str) -> np.ndarray:
    rows = []
    off = 0
    dim = None
    size = np.dtype(item).itemsize
    while off < len(data):
        if off + 4 > len(data):
            raise FormatError(f"{path}: truncated dimension header at byte offset {off}")
        n = int(np.frombuffer(data, dtype="<i4", count=1, offset=off)[0])
        if n <= 0:
            raise FormatError(f"{path}: non-positive dimension {n} at byte offset {off}")
        if dim is None:
            dim = n
        elif n != dim:
            raise FormatError(f"{path}: record at byte offset {off} has dimension {n}, expected {dim}")
        end = off + 4 + n * size
        if end > len(data):
            raise FormatError(f"{path}: truncated record at byte offset {off}")
        rows.append(np.frombuffer(data, dtype=item, count=n, offset=off + 4))
        off = end
    if not rows:
        raise DataError(f"{path}: no records")
    return np.vstack(rows).astype(np.float64)


def _read_raw(data: bytes, dim: Optional[int], path: str) -> np.ndarray:
    if not dim or dim <= 0:
        raise ConfigError("raw float32 input needs a positive --dim")
    rec = 4 * dim
    if len(data) % rec:
        raise FormatError(f"{path}: {len(data)} bytes is not a whole number of {dim}-dim records; trailing record at byte offset {len(data) - len(data) % rec}")
    if not data:
        raise DataError(f"{path}: no records")
    return np.frombuffer(data, dtype="<f4").reshape(-1, dim).astype(np.float64)


def _read_csv(path: str) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for r, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise FormatError(f"{path}: row {r}, column {c}: non-numeric value {cell!r}") from None
            if rows and len(vals) != len(rows[0]):
                raise FormatError(f"{path}: row {r} has {len(vals)} columns, expected {len(rows[0])}")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no records")
    return np.asarray(rows, dtype=np.float64)


def normalize_rows(x: np.ndarray):
    """Unit-normalize rows; zero or non-finite rows raise :class:`DataError` naming the index."""
    norms = np.sqrt(np.sum(x * x, axis=1))
    bad = np.flatnonzero(~(norms > 0) | ~np.isfinite(norms))
    if bad.size:
        raise DataError(f"vector {int(bad[0])} has zero or non-finite norm and cannot be normalized")
    return x / norms[:, None], norms


def pad_rows(x: np.ndarray, pad_to: int) -> np.ndarray:
    """Append zero coordinates up to ``pad_to``."""
    if pad_to < x.shape[1]:
        raise ConfigError(f"pad_to={pad_to} is smaller than the data dimension {x.shape[1]}")
    if pad_to == x.shape[1]:
        return x
    out = np.zeros((x.shape[0], pad_to))
    out[:, : x.shape[1]] = x
    return out


def load_dataset(
    path: str, format: str = "fvecs", normalize: bool = True, pad_to: Optional[int] = None, dim: Optional[int] = None
) -> DatasetHandle:
    """Load a dataset into memory.

    Args:
        path: File path.
        format: One of ``fvecs``, ``bvecs``, ``raw`` (little-endian float32) or ``csv``.
        normalize: Scale rows to unit norm (zero rows are rejected).
        pad_to: Optional padded dimension; zeros are appended after normalization.
        dim: Record dimension, required for ``raw``.

    Returns:
        The loaded dataset.
    """
    try:
        fmt = DatasetFormat(format)
    except ValueError:
        raise ConfigError(f"unknown dataset format {format!r}") from None
    if not os.path.isfile(path):
        raise DataError(f"dataset file not found: {path}")
    if fmt is DatasetFormat.CSV:
        x = _read_csv(path)
    else:
        with open(path, "rb") as fh:
            data = fh.read()
        if fmt is DatasetFormat.FVECS:
            x = _read_vecs(data, np.dtype("<f4"), path)
        elif fmt is DatasetFormat.BVECS:
            x = _read_vecs(data, np.dtype("u1"), path)
        else:
            x = _read_raw(data, dim, path)
    if not np.all(np.isfinite(x)):
        row = int(np.flatnonzero(~np.all(np.isfinite(x), axis=1))[0])
        raise DataError(f"{path}: vector {row} contains non-finite values")
    norms = np.sqrt(np.sum(x * x, axis=1))
    if normalize:
        x, norms = normalize_rows(x)
    original = x.shape[1]
    if pad_to is not None:
        x = pad_rows(x, int(pad_to))
    return DatasetHandle(path, fmt, np.ascontiguousarray(x), original, normalize, norms)


def write_fvecs(path: str, x: np.ndarray) -> None:
    """Write rows as FVECS records."""
    x = np.asarray(x, dtype="<f4")
    n, d = x.shape
    rec = np.empty((n, d + 1), dtype="<f4")
    rec[:, 1:] = x
    rec[:, 0] = np.array([d], dtype="<i4").view("<f4")[0]
    atomic_write_bytes(path, rec.tobytes())


def synthetic_unit(n: int, dim: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. uniform unit vectors from seed ``seed``."""
    g = stream(seed).standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)
