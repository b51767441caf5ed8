"""Seeded random orthogonal transforms.

Two backends are provided. ``ExactHaar`` stores a dense Haar-distributed
orthogonal matrix obtained from the QR factorization of a Gaussian matrix with
the sign of each diagonal entry of R absorbed into Q. ``FastStructured``
composes rounds of a random sign flip followed by a normalized Walsh-Hadamard
transform and costs O(d log d) per vector.

Gaussian columns come from counter-based Philox streams keyed by
``(seed, column)``, so any prefix of the Haar frame can be generated without
materializing the full matrix (see :func:`haar_columns`).
"""

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._kernels import rowwise_matmul
from .errors import ConfigError, DimensionError
from .seeding import check_seed, stream

# Philox counter offset separating sign streams from Gaussian column streams.
_SIGN_COUNTER = 1 << 63


class Backend(str, enum.Enum):
    EXACT_HAAR = "haar"
    FAST_STRUCTURED = "fast"


@dataclass(frozen=True, eq=False)
class RotationOperator:
    """Immutable orthogonal operator on R^dim.

    Attributes:
        dim: Ambient dimension.
        seed: 64-bit seed that fully determines the operator.
        backend: Which construction is used.
        rounds: Number of sign/Hadamard rounds (FastStructured only).
    """

    dim: int
    seed: int
    backend: Backend
    rounds: int = 0
    _matrix: Optional[np.ndarray] = field(default=None, repr=False)
    _matrix_t: Optional[np.ndarray] = field(default=None, repr=False)
    _signs: Optional[np.ndarray] = field(default=None, repr=False)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Compute ``R x`` for one vector or for each row of a batch."""
        return _transform(self, x, inverse=False)

    def inverse_apply(self, z: np.ndarray) -> np.ndarray:
        """Compute ``R^T z`` for one vector or for each row of a batch."""
        return _transform(self, z, inverse=True)

    def matrix(self) -> np.ndarray:
        """Return the dense matrix of the operator (a copy)."""
        if self._matrix is not None:
            return self._matrix.copy()
        return self.apply(np.eye(self.dim)).T

    def descriptor(self) -> str:
        if self.backend is Backend.FAST_STRUCTURED:
            return f"fast(rounds={self.rounds})"
        return "haar"


def _gaussian_columns(dim: int, seed: int, k: int) -> np.ndarray:
    g = np.empty((dim, k))
    for j in range(k):
        g[:, j] = stream(seed, j).standard_normal(dim)
    return g


def _qr_haar(g: np.ndarray) -> np.ndarray:
    # Works on a single (d, k) matrix or a stack of them.
    q, r = np.linalg.qr(g)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    signs = np.where(diag < 0, -1.0, 1.0)
    return q * signs[..., None, :]


def build_haar(dim: int, seed: int) -> RotationOperator:
    """Sample an exactly Haar-distributed rotation.

    Args:
        dim: Dimension, at least 2.
        seed: 64-bit seed.

    Returns:
        An ``ExactHaar`` operator.
    """
    dim = int(dim)
    if dim < 2:
        raise DimensionError(f"rotation dimension must be >= 2, got {dim}")
    seed = check_seed(seed)
    q = _qr_haar(_gaussian_columns(dim, seed, dim))
    q = np.ascontiguousarray(q)
    qt = np.ascontiguousarray(q.T)
    q.setflags(write=False)
    qt.setflags(write=False)
    return RotationOperator(dim, seed, Backend.EXACT_HAAR, 0, _matrix=q, _matrix_t=qt)


def haar_columns(dim: int, seed: int, k: int) -> np.ndarray:
    """Return the first ``k`` columns of ``build_haar(dim, seed)``.

    Since Gram-Schmidt on the first k Gaussian columns does not depend on the
    remaining ones, this equals the leading columns of the full operator up to
    floating-point rounding while costing O(d k^2).
    """
    if not 1 <= k <= dim:
        raise ConfigError(f"k must lie in [1, {dim}], got {k}")
    return _qr_haar(_gaussian_columns(dim, check_seed(seed), k))


def haar_frames(dim: int, seeds: Sequence[int], k: int) -> np.ndarray:
    """Stack ``haar_columns(dim, s, k)`` for every seed in ``seeds``.

    Returns:
        Array of shape ``(len(seeds), dim, k)``.
    """
    g = np.empty((len(seeds), dim, k))
    for i, s in enumerate(seeds):
        s = check_seed(s)
        for j in range(k):
            g[i, :, j] = stream(s, j).standard_normal(dim)
    return _qr_haar(g)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def build_fast(dim: int, seed: int, rounds: int = 3) -> RotationOperator:
    """Build a structured rotation from sign flips and Hadamard transforms.

    Args:
        dim: Dimension; must be a power of two (pad inputs otherwise).
        seed: 64-bit seed.
        rounds: Number of (sign flip, Hadamard) rounds, at least 1.

    Returns:
        A ``FastStructured`` operator.
    """
    dim = int(dim)
    if dim < 2 or not is_power_of_two(dim):
        raise DimensionError(
            f"fast rotation needs a power-of-two dimension, got {dim}; "
            "pad the input with zeros to the next power of two"
        )
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    seed = check_seed(seed)
    signs = np.empty((rounds, dim))
    for r in range(rounds):
        bits = stream(seed, _SIGN_COUNTER + r).integers(0, 2, size=dim)
        signs[r] = 1.0 - 2.0 * bits
    signs.setflags(write=False)
    return RotationOperator(dim, seed, Backend.FAST_STRUCTURED, int(rounds), _signs=signs)


def build_rotation(dim: int, seed: int, backend: str = "haar", rounds: int = 3) -> RotationOperator:
    """Build a rotation by backend name (``"haar"`` or ``"fast"``)."""
    try:
        kind = Backend(backend)
    except ValueError:
        raise ConfigError(f"unknown rotation backend {backend!r}") from None
    if kind is Backend.EXACT_HAAR:
        return build_haar(dim, seed)
    return build_fast(dim, seed, rounds)


def fwht(x: np.ndarray) -> np.ndarray:
    """Normalized Walsh-Hadamard transform along the last axis of a 2-D array."""
    n, d = x.shape
    y = x
    h = 1
    while h < d:
        y = y.reshape(n, d // (2 * h), 2, h)
        a = y[:, :, 0, :]
        b = y[:, :, 1, :]
        y = np.stack((a + b, a - b), axis=2)
        h *= 2
    return y.reshape(n, d) * (1.0 / np.sqrt(d))


def _transform(op: RotationOperator, x: np.ndarray, inverse: bool) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if arr.ndim not in (1, 2) or arr.shape[-1] != op.dim:
        raise DimensionError(f"expected length {op.dim}, got shape {arr.shape}")
    rows = arr[None, :] if single else arr
    if op.backend is Backend.EXACT_HAAR:
        # BLAS selects kernels by batch shape, so a single row and the same
        # row inside a batch can round differently. The fixed-order kernel
        # keeps batch and per-vector application bitwise identical.
        mat = op._matrix if inverse else op._matrix_t
        out = rowwise_matmul(np.ascontiguousarray(rows), mat)
    else:
        out = rows
        order = range(op.rounds - 1, -1, -1) if inverse else range(op.rounds)
        for r in order:
            if inverse:
                out = fwht(out) * op._signs[r]
            else:
                out = fwht(out * op._signs[r])
    return out[0] if single else np.ascontiguousarray(out)


def apply(op: RotationOperator, x: np.ndarray) -> np.ndarray:
    """Compute ``R x``."""
    return op.apply(x)


def inverse_apply(op: RotationOperator, z: np.ndarray) -> np.ndarray:
    """Compute ``R^T z``."""
    return op.inverse_apply(z)
