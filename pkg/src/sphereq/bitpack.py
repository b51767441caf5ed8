"""Little-endian bit packing of fixed-width codes.

Code ``i`` of width ``w`` occupies stream bits ``[i*w, (i+1)*w)`` with its
least significant bit first, and stream bit ``t`` is bit ``t % 8`` of byte
``t // 8``. Several fields can be concatenated into one stream.
"""

from typing import List, Sequence, Tuple

import numpy as np


def packed_bytes(n_bits: int) -> int:
    return (n_bits + 7) // 8


def _to_bits(codes: np.ndarray, width: int) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() >= (1 << width)):
        raise ValueError(f"codes must lie in [0, {1 << width}) for width {width}")
    codes = codes.astype(np.uint64)
    shifts = np.arange(width, dtype=np.uint64)
    bits = (codes[..., None] >> shifts) & np.uint64(1)
    return bits.astype(np.uint8).reshape(codes.shape[0], -1)


def pack_fields(fields: Sequence[Tuple[np.ndarray, int]]) -> np.ndarray:
    """Pack ``(codes, width)`` fields row by row into one byte stream per row.

    Args:
        fields: Each entry holds a ``(n, m)`` integer array and its bit width.

    Returns:
        ``uint8`` array of shape ``(n, ceil(total_bits / 8))``.
    """
    parts = [_to_bits(c, w) for c, w in fields if w > 0 and np.asarray(c).shape[1] > 0]
    if not parts:
        n = np.asarray(fields[0][0]).shape[0]
        return np.zeros((n, 0), dtype=np.uint8)
    bits = np.concatenate(parts, axis=1)
    return np.packbits(bits, axis=1, bitorder="little")


def unpack_fields(packed: np.ndarray, layout: Sequence[Tuple[int, int]]) -> List[np.ndarray]:
    """Inverse of :func:`pack_fields` for a layout of ``(count, width)`` pairs."""
    packed = np.atleast_2d(np.asarray(packed, dtype=np.uint8))
    total = sum(m * w for m, w in layout)
    bits = np.unpackbits(packed, axis=1, count=total, bitorder="little").astype(np.int64)
    out = []
    pos = 0
    for m, w in layout:
        if w == 0:
            out.append(np.zeros((packed.shape[0], m), dtype=np.int64))
            continue
        chunk = bits[:, pos : pos + m * w].reshape(-1, m, w)
        weights = np.left_shift(np.int64(1), np.arange(w, dtype=np.int64))
        out.append(chunk @ weights)
        pos += m * w
    return out


def pack_codes(codes: np.ndarray, width: int) -> np.ndarray:
    return pack_fields([(np.atleast_2d(codes), width)])


def unpack_codes(packed: np.ndarray, count: int, width: int) -> np.ndarray:
    return unpack_fields(packed, [(count, width)])[0]
