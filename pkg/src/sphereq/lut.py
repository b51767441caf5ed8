"""Cartesian lookup tables for approximate nearest-centroid search.

The box ``[-A, A]^p`` is cut into ``L^p`` equal cells. For every cell centre
the table stores the ``k`` closest centroids, ordered by distance to the
centre (ties by index), so candidate sets for increasing ``k`` are nested.
A query locates its cell (clamping coordinates into the box) and searches
only that cell's candidates.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from .block_codebook import BlockCodebook
from .errors import ConfigError, DomainError, FormatError, StaleLUTError
from .io_utils import atomic_write_bytes

MAGIC = b"SQL1"
_HEADER = struct.Struct("<4sBBHIdBI32sB")
_FRAME_CODE = {"scaled": 0, "ball": 1}
MAX_ENTRIES = 1 << 27


def default_halfwidth(cb: BlockCodebook) -> float:
    """Default box half-width: 4 standard deviations of a rescaled coordinate.

    In the ball frame a coordinate has standard deviation ``1/sqrt(d)``, so
    the box is ``min(1, 4/sqrt(d))`` rather than the whole unit ball, which
    would make cells far wider than the centroid spacing at realistic d. If a
    centroid lies outside that box, the width grows in steps of 1/16 of it
    until every centroid is covered.
    """
    base = 4.0 if cb.frame == "scaled" else min(1.0, 4.0 / math.sqrt(cb.dim))
    reach = float(np.abs(cb.centroids).max()) if cb.size else 0.0
    if reach <= base:
        return base
    step = base / 16
    return math.ceil(reach / step) * step


@dataclass(frozen=True, eq=False)
class AssignLUT:
    """Immutable candidate table bound to one codebook.

    Attributes:
        p: Block size.
        bits: Bits per coordinate of the bound codebook.
        L: Bins per axis.
        k: Candidates per cell.
        halfwidth: Box half-width ``A``.
        frame: Frame of the bound codebook.
        dim: Ambient dimension for ball-frame codebooks, else 0.
        table: ``(L^p, k)`` candidate indices.
        centroids: Copy of the bound codebook's centroids.
        codebook_digest: SHA-256 of the bound codebook.
    """

    p: int
    bits: int
    L: int
    k: int
    halfwidth: float
    frame: str
    dim: int
    table: np.ndarray
    centroids: np.ndarray
    codebook_digest: str

    @property
    def cell_width(self) -> float:
        return 2.0 * self.halfwidth / self.L

    @property
    def half_diagonal(self) -> float:
        """Largest distance from a point of a cell to the cell centre (``r_L``)."""
        return 0.5 * self.cell_width * math.sqrt(self.p)

    def cell_coords(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.p:
            raise ConfigError(f"expected points of dimension {self.p}, got {z.shape}")
        i = np.floor((z + self.halfwidth) / self.cell_width).astype(np.int64)
        return np.clip(i, 0, self.L - 1)

    def cell_index(self, z: np.ndarray) -> np.ndarray:
        """Flat (C-order) cell index of each point, after clamping."""
        coords = self.cell_coords(z)
        flat = np.zeros(coords.shape[0], dtype=np.int64)
        for t in range(self.p):
            flat = flat * self.L + coords[:, t]
        return flat

    def cell_centers(self, flat: Optional[np.ndarray] = None) -> np.ndarray:
        if flat is None:
            flat = np.arange(self.L**self.p)
        return _centers(np.asarray(flat, dtype=np.int64), self.L, self.p, self.halfwidth)

    def check_codebook(self, cb: BlockCodebook) -> None:
        if cb.digest() != self.codebook_digest:
            raise StaleLUTError("lookup table was built for a different codebook; rebuild it")

    def assign(self, z: np.ndarray) -> np.ndarray:
        """Approximate nearest centroid for each row of ``z``; ties by lowest index."""
        return self.assign_with_distance(z)[0]

    def assign_with_distance(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        cells = self.cell_index(z)
        size = self.centroids.shape[0]
        idx = np.empty(z.shape[0], dtype=np.int64)
        best = np.empty(z.shape[0])
        # Bound the (rows, k, p) candidate tensor to a few million entries.
        step = max(1, (1 << 21) // (self.k * self.p))
        for s in range(0, z.shape[0], step):
            cand = self.table[cells[s : s + step]].astype(np.int64)
            diff = z[s : s + step, None, :] - self.centroids[cand]
            d2 = np.einsum("nkp,nkp->nk", diff, diff)
            b = d2.min(axis=1)
            best[s : s + step] = b
            idx[s : s + step] = np.where(d2 == b[:, None], cand, size).min(axis=1)
        return idx, best


def _centers(flat: np.ndarray, L: int, p: int, halfwidth: float) -> np.ndarray:
    coords = np.empty((flat.shape[0], p), dtype=np.int64)
    rest = flat.copy()
    for t in range(p - 1, -1, -1):
        coords[:, t] = rest % L
        rest //= L
    width = 2.0 * halfwidth / L
    return -halfwidth + (coords + 0.5) * width


def topk_sorted(points: np.ndarray, centroids: np.ndarray, k: int) -> np.ndarray:
    """The ``k`` nearest centroids of each point, ordered by distance then index."""
    size = centroids.shape[0]
    if size <= 256:
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argsort(d2, axis=1, kind="stable")[:, :k]
    wide = min(size, k + 8)
    _, idx = cKDTree(centroids).query(points, k=wide)
    idx = idx.reshape(points.shape[0], wide)
    diff = points[:, None, :] - centroids[idx]
    d2 = (diff**2).sum(axis=2)
    order = _rowwise_lexsort(d2, idx)
    return np.take_along_axis(idx, order, axis=1)[:, :k]


def _rowwise_lexsort(d2: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # Sort each row by distance, breaking ties by centroid index.
    order = np.argsort(idx, axis=1, kind="stable")
    d_sorted = np.take_along_axis(d2, order, axis=1)
    second = np.argsort(d_sorted, axis=1, kind="stable")
    return np.take_along_axis(order, second, axis=1)


def build_lut(cb: BlockCodebook, L: int = 64, k: int = 8, halfwidth: Optional[float] = None) -> AssignLUT:
    """Precompute the top-``k`` candidate centroids of every grid cell.

    Args:
        cb: Codebook to index; the table works in the codebook's frame.
        L: Bins per axis, 2 to 4096.
        k: Candidates per cell, 1 to K.
        halfwidth: Box half-width ``A`` (default from :func:`default_halfwidth`).

    Returns:
        A table bound to ``cb`` by its digest.
    """
    size = cb.size
    if not 2 <= L <= 4096:
        raise ConfigError(f"L must lie in [2, 4096], got {L}")
    if not 1 <= k <= size:
        raise ConfigError(f"k must lie in [1, {size}], got {k}")
    cells = L**cb.p
    if cells * k > MAX_ENTRIES:
        raise ConfigError(f"table would hold {cells * k} entries (limit {MAX_ENTRIES})")
    A = default_halfwidth(cb) if halfwidth is None else float(halfwidth)
    if A <= 0:
        raise ConfigError("halfwidth must be positive")
    outside = np.argwhere(np.abs(cb.centroids) > A)
    if outside.size:
        i, t = outside[0]
        raise DomainError(
            f"centroid {i} has coordinate {t} = {cb.centroids[i, t]:.6g} outside [-{A:g}, {A:g}]"
        )
    centers = _centers(np.arange(cells, dtype=np.int64), L, cb.p, A)
    dtype = np.uint16 if size <= 1 << 16 else np.uint32
    table = np.empty((cells, k), dtype=dtype)
    chunk = 1 << 16
    for s in range(0, cells, chunk):
        table[s : s + chunk] = topk_sorted(centers[s : s + chunk], cb.centroids, k)
    table.setflags(write=False)
    cent = np.array(cb.centroids)
    cent.setflags(write=False)
    return AssignLUT(cb.p, cb.bits, int(L), int(k), A, cb.frame, cb.dim, table, cent, cb.digest())


def lut_assign(lut: AssignLUT, z: np.ndarray, cb: Optional[BlockCodebook] = None) -> np.ndarray:
    """Approximate assignment; verifies the binding first when ``cb`` is given."""
    if cb is not None:
        lut.check_codebook(cb)
    return lut.assign(z)


def lut_to_bytes(lut: AssignLUT) -> bytes:
    width = lut.table.dtype.itemsize
    head = _HEADER.pack(
        MAGIC, lut.p, lut.bits, lut.L, lut.k, lut.halfwidth, _FRAME_CODE[lut.frame], lut.dim,
        bytes.fromhex(lut.codebook_digest), width,
    )
    return head + lut.table.astype(f"<u{width}").tobytes()


def save_lut(lut: AssignLUT, path: Union[str, Path]) -> None:
    atomic_write_bytes(path, lut_to_bytes(lut))


def lut_from_bytes(data: bytes, cb: BlockCodebook) -> AssignLUT:
    if len(data) < _HEADER.size:
        raise FormatError("lookup table file is truncated")
    magic, p, bits, L, k, A, frame, dim, digest, width = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("not a lookup table file (bad magic)")
    if width not in (2, 4):
        raise FormatError(f"unsupported index width {width}")
    cells = L**p
    expected = _HEADER.size + cells * k * width
    if len(data) != expected:
        raise FormatError(f"lookup table payload is {len(data)} bytes, expected {expected}")
    if digest.hex() != cb.digest():
        raise StaleLUTError("lookup table was built for a different codebook; rebuild it")
    if p != cb.p or bits != cb.bits:
        raise FormatError("lookup table header disagrees with its codebook")
    table = np.frombuffer(data, dtype=f"<u{width}", offset=_HEADER.size).reshape(cells, k)
    table = table.astype(np.uint16 if width == 2 else np.uint32)
    if table.size and int(table.max()) >= cb.size:
        raise FormatError("lookup table references a centroid outside the codebook")
    table.setflags(write=False)
    frame_name = {v: n for n, v in _FRAME_CODE.items()}[frame]
    cent = np.array(cb.centroids)
    cent.setflags(write=False)
    return AssignLUT(p, bits, L, k, A, frame_name, dim, table, cent, cb.digest())


def load_lut(path: Union[str, Path], cb: BlockCodebook) -> AssignLUT:
    return lut_from_bytes(Path(path).read_bytes(), cb)
