"""SQZ1 quantized-batch files.

Layout (little-endian throughout)::

    offset  size  field
    0       4     magic b"SQZ1"
    4       1     format version (1)
    5       1     family code (eden=1, rabitq=2, tq-mse=3, tq-prod=4, block=5)
    6       1     variant code (bsm=1, ub=2, raw=3)
    7       1     bits per coordinate b
    8       2     block size p
    10      1     rotation backend (haar=1, fast=2)
    11      1     fast-rotation rounds (0 for haar)
    12      4     operating dimension d
    16      4     original dimension before zero padding
    20      8     rotation seed
    28      8     record count N
    36      1     flags (bit 0: aux present, bit 1: LUT assignment)
    37      32    run-config sha256 (zeros when absent)
    69      32    codebook sha256 (zeros for scalar families)
    101     2     tag length T
    103     T     scheme tag, UTF-8

followed by N records of ``ceil(b d / 8)`` packed code bytes, ``rho`` (f32),
input norm (f32) and, when flagged, the aux scalar (f32).
"""

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .bitpack import packed_bytes
from .errors import ConfigError, FormatError
from .io_utils import atomic_write_bytes
from .quantizers import FAMILY_CODES, VARIANT_CODES, QuantizedBatch, SchemeConfig
from .rotation import Backend

MAGIC = b"SQZ1"
VERSION = 1
_FIXED = struct.Struct("<4sBBBBHBBIIQQB32s32sH")
BACKEND_CODES = {Backend.EXACT_HAAR: 1, Backend.FAST_STRUCTURED: 2}
_ZERO = b"\0" * 32


@dataclass(frozen=True)
class BatchHeader:
    family: int
    variant: int
    bits: int
    block_size: int
    backend: int
    rounds: int
    dim: int
    original_dim: int
    rotation_seed: int
    count: int
    has_aux: bool
    uses_lut: bool
    config_hash: bytes
    codebook_hash: bytes
    tag: str

    @property
    def size(self) -> int:
        return _FIXED.size + len(self.tag.encode("utf-8"))

    @property
    def code_bytes(self) -> int:
        return packed_bytes(self.bits * self.dim)

    @property
    def record_bytes(self) -> int:
        return self.code_bytes + 8 + (4 if self.has_aux else 0)


def codebook_hash(cfg: SchemeConfig) -> bytes:
    """Digest identifying the codebook a scheme decodes with."""
    if cfg.block is not None:
        return bytes.fromhex(cfg.block.digest())
    if cfg.scalar is not None:
        return hashlib.sha256(cfg.scalar.to_text().encode("utf-8")).digest()
    return _ZERO


def header_for(cfg: SchemeConfig, count: int, original_dim: Optional[int] = None, config_hash: bytes = b"") -> BatchHeader:
    """Header describing ``count`` records encoded with ``cfg``."""
    rot = cfg.rotation
    return BatchHeader(
        FAMILY_CODES[cfg.family], VARIANT_CODES[cfg.variant], cfg.bits, cfg.block_size, BACKEND_CODES[rot.backend],
        rot.rounds if rot.backend is Backend.FAST_STRUCTURED else 0, cfg.dim,
        cfg.dim if original_dim is None else int(original_dim), rot.seed, int(count), cfg.aux_name is not None,
        cfg.lut is not None, (config_hash or _ZERO).ljust(32, b"\0")[:32], codebook_hash(cfg), cfg.tag,
    )


def check_header(cfg: SchemeConfig, header: BatchHeader) -> None:
    """Raise :class:`ConfigError` unless ``header`` was written by ``cfg``."""
    expected = header_for(cfg, header.count, header.original_dim, header.config_hash)
    for name in ("family", "variant", "bits", "block_size", "backend", "rounds", "dim", "rotation_seed", "has_aux", "codebook_hash", "tag"):
        got, want = getattr(header, name), getattr(expected, name)
        if got != want:
            if isinstance(got, bytes):
                got, want = got.hex()[:16], want.hex()[:16]
            raise ConfigError(f"batch file {name} is {got!r} but the scheme expects {want!r}")


def batch_to_bytes(cfg: SchemeConfig, qb: QuantizedBatch, original_dim: Optional[int] = None, config_hash: bytes = b"") -> bytes:
    """Serialize a batch; the result is fully determined by its inputs."""
    h = header_for(cfg, len(qb), original_dim, config_hash)
    tag = h.tag.encode("utf-8")
    head = _FIXED.pack(
        MAGIC, VERSION, h.family, h.variant, h.bits, h.block_size, h.backend, h.rounds, h.dim, h.original_dim,
        h.rotation_seed, h.count, int(h.has_aux) | (int(h.uses_lut) << 1), h.config_hash, h.codebook_hash, len(tag),
    )
    cols = [("codes", np.uint8, (h.code_bytes,)), ("rho", "<f4"), ("norm", "<f4")]
    if h.has_aux:
        cols.append(("aux", "<f4"))
    rec = np.zeros(h.count, dtype=np.dtype(cols))
    if h.count:
        rec["codes"] = qb.codes
        rec["rho"] = qb.rho
        rec["norm"] = qb.norm
        if h.has_aux:
            rec["aux"] = qb.aux
    return head + tag + rec.tobytes()


def write_batch(path, cfg: SchemeConfig, qb: QuantizedBatch, original_dim: Optional[int] = None, config_hash: bytes = b"") -> None:
    """Atomically write an SQZ1 file."""
    atomic_write_bytes(path, batch_to_bytes(cfg, qb, original_dim, config_hash))


def parse_header(data: bytes) -> BatchHeader:
    if len(data) < _FIXED.size:
        raise FormatError(f"SQZ1 header truncated: {len(data)} bytes")
    (magic, version, fam, var, bits, p, backend, rounds, dim, odim, seed, count, flags, ch, cbh, tlen) = _FIXED.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported SQZ1 version {version}")
    end = _FIXED.size + tlen
    if len(data) < end:
        raise FormatError("SQZ1 header truncated inside the scheme tag")
    try:
        tag = data[_FIXED.size : end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("scheme tag is not valid UTF-8") from exc
    return BatchHeader(fam, var, bits, p, backend, rounds, dim, odim, seed, count, bool(flags & 1), bool(flags & 2), ch, cbh, tag)


def batch_from_bytes(data: bytes) -> Tuple[BatchHeader, QuantizedBatch]:
    """Parse SQZ1 bytes into a header and a batch."""
    h = parse_header(data)
    expected = h.size + h.count * h.record_bytes
    if len(data) != expected:
        raise FormatError(f"SQZ1 payload is {len(data)} bytes; header implies {expected}")
    cols = [("codes", np.uint8, (h.code_bytes,)), ("rho", "<f4"), ("norm", "<f4")]
    if h.has_aux:
        cols.append(("aux", "<f4"))
    rec = np.frombuffer(data, dtype=np.dtype(cols), count=h.count, offset=h.size)
    qb = QuantizedBatch(
        h.tag, h.rotation_seed, h.dim, np.ascontiguousarray(rec["codes"]), rec["rho"].astype(np.float32),
        rec["norm"].astype(np.float32), rec["aux"].astype(np.float32) if h.has_aux else None,
    )
    return h, qb


def read_batch(path) -> Tuple[BatchHeader, QuantizedBatch]:
    with open(path, "rb") as fh:
        return batch_from_bytes(fh.read())
