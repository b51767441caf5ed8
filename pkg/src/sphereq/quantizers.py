"""Rotation-based quantizers behind one interface.

Every scheme normalizes its input, rotates it with a seeded orthogonal
operator ``R`` (``z = R x``), encodes ``z`` against a fixed codebook into a
reconstruction ``z_bar`` and stores the alignment ``rho = <z, z_bar>``.
Dequantization maps ``S * R^T z_bar`` back, where the variant picks ``S``:

* ``bsm``: ``rho / |z_bar|^2``, the least-squares scale (minimum MSE).
* ``ub``: ``1 / rho``, which makes inner-product estimates unbiased.
* ``raw``: 1.

Families:

* ``eden``: per-coordinate Gaussian Lloyd-Max codebook in the sqrt(d) frame.
* ``tq-mse``: the same with the exact spherical-marginal codebook.
* ``rabitq``: half-integer grid codes with a per-vector scale; the codeword
  is the normalized grid point, so ``|z_bar| = 1``.
* ``tq-prod``: (b-1)-bit ``tq-mse`` plus a one-bit sign sketch of the residual.
* ``block``: nearest centroid per p-coordinate block of ``z``.
"""

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

from ._kernels import rabitq_sweep, rowwise_matmul
from .bitpack import pack_fields, packed_bytes, unpack_fields
from .block_codebook import BlockCodebook, load_pretrained, nearest_centroid
from .errors import (
    ConfigError,
    DataError,
    DegenerateAlignmentError,
    DimensionError,
    SearchError,
)
from .lut import AssignLUT
from .rotation import RotationOperator, build_rotation
from .scalar_codebook import ScalarCodebook, gaussian_codebook, spherical_codebook
from .seeding import derive_seed, stream

RHO_MIN = 1e-6
QJL_SCALE = math.sqrt(math.pi / 2.0)


class Family(str, enum.Enum):
    EDEN = "eden"
    RABITQ = "rabitq"
    TQ_MSE = "tq-mse"
    TQ_PROD = "tq-prod"
    BLOCK = "block"


class Variant(str, enum.Enum):
    BSM = "bsm"
    UB = "ub"
    RAW = "raw"


FAMILY_CODES = {Family.EDEN: 1, Family.RABITQ: 2, Family.TQ_MSE: 3, Family.TQ_PROD: 4, Family.BLOCK: 5}
VARIANT_CODES = {Variant.BSM: 1, Variant.UB: 2, Variant.RAW: 3}
DEFAULT_VARIANT = {
    Family.EDEN: Variant.BSM,
    Family.RABITQ: Variant.BSM,
    Family.TQ_MSE: Variant.RAW,
    Family.TQ_PROD: Variant.UB,
    Family.BLOCK: Variant.BSM,
}
ALLOWED_VARIANTS = {
    Family.EDEN: (Variant.BSM, Variant.UB),
    Family.RABITQ: (Variant.BSM, Variant.UB),
    Family.TQ_MSE: (Variant.RAW, Variant.BSM, Variant.UB),
    Family.TQ_PROD: (Variant.UB,),
    Family.BLOCK: (Variant.RAW, Variant.BSM, Variant.UB),
}


@dataclass(frozen=True, eq=False)
class SchemeConfig:
    """Immutable description of one quantization scheme.

    Build instances with :func:`make_scheme`, which validates the combination
    and attaches codebooks.
    """

    family: Family
    variant: Variant
    bits: int
    dim: int
    rotation: RotationOperator
    block_size: int = 1
    scalar: Optional[ScalarCodebook] = None
    block: Optional[BlockCodebook] = None
    lut: Optional[AssignLUT] = None
    qjl_seed: int = 0
    _ball: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_symbols(self) -> int:
        return self.dim // self.block_size

    @property
    def symbol_width(self) -> int:
        if self.family is Family.TQ_PROD:
            return self.bits - 1
        return self.bits * self.block_size

    @property
    def code_bits(self) -> int:
        """Total code bits per vector, always ``bits * dim``."""
        return self.bits * self.dim

    @property
    def aux_name(self) -> Optional[str]:
        if self.family is Family.RABITQ:
            return "alpha"
        if self.family is Family.TQ_PROD:
            return "residual_norm"
        return None

    @property
    def record_bytes(self) -> int:
        """Bytes per stored vector: packed codes, rho, norm and optional aux (float32 each)."""
        return packed_bytes(self.code_bits) + 8 + (4 if self.aux_name else 0)

    @property
    def assign_mode(self) -> str:
        return "lut" if self.lut is not None else "exact"

    @property
    def tag(self) -> str:
        bits = f"b={self.bits}"
        if self.family is Family.BLOCK:
            bits = f"p={self.block_size},{bits}"
            if self.lut is not None:
                bits += f",lut(L={self.lut.L},k={self.lut.k})"
        return f"{self.family.value}-{self.variant.value}({bits})"

    def block_centroids(self) -> np.ndarray:
        assert self._ball is not None
        return self._ball


def make_scheme(
    family: Union[str, Family],
    bits: int,
    dim: int,
    variant: Union[str, Variant, None] = None,
    seed: int = 0,
    block_size: Optional[int] = None,
    backend: str = "haar",
    rounds: int = 3,
    rotation: Optional[RotationOperator] = None,
    codebook: Optional[Union[ScalarCodebook, BlockCodebook]] = None,
    lut: Optional[AssignLUT] = None,
    scalar_target: Optional[str] = None,
) -> SchemeConfig:
    """Validate a scheme description and attach its rotation and codebook.

    Args:
        family: One of ``eden``, ``rabitq``, ``tq-mse``, ``tq-prod``, ``block``.
        bits: Bits per coordinate ``b``.
        dim: Operating dimension ``d`` (already padded).
        variant: ``bsm``, ``ub`` or ``raw``; defaults per family.
        seed: Rotation seed when ``rotation`` is not given.
        block_size: ``p`` for ``block`` (default 1 elsewhere, 2 for block).
        backend: Rotation backend, ``haar`` or ``fast``.
        rounds: Rounds of the fast backend.
        rotation: Prebuilt rotation to share across schemes.
        codebook: Scalar codebook override, or block codebook for ``block``.
        lut: Lookup table for approximate block assignment.
        scalar_target: ``spherical`` (default) or ``gaussian`` for ``tq-*``.

    Returns:
        A ready-to-use :class:`SchemeConfig`.
    """
    try:
        fam = Family(family)
    except ValueError:
        raise ConfigError(f"unknown scheme family {family!r}") from None
    try:
        var = DEFAULT_VARIANT[fam] if variant is None else Variant(variant)
    except ValueError:
        raise ConfigError(f"unknown variant {variant!r}") from None
    if var not in ALLOWED_VARIANTS[fam]:
        allowed = ", ".join(v.value for v in ALLOWED_VARIANTS[fam])
        raise ConfigError(f"variant {var.value} is not valid for {fam.value} (allowed: {allowed})")
    bits = int(bits)
    dim = int(dim)
    if not 1 <= bits <= 8:
        raise ConfigError(f"bits must lie in [1, 8], got {bits}")
    if dim < 2:
        raise DimensionError(f"dimension must be >= 2, got {dim}")
    p = 1 if block_size is None and fam is not Family.BLOCK else (block_size or 2)
    if fam is not Family.BLOCK and p != 1:
        raise ConfigError(f"block size applies to the block family only, got p={p}")
    if fam is Family.BLOCK and dim % p:
        raise DimensionError(f"block size {p} must divide the dimension {dim}; pad the input")
    if rotation is None:
        rotation = build_rotation(dim, seed, backend, rounds)
    elif rotation.dim != dim:
        raise DimensionError(f"rotation has dimension {rotation.dim}, scheme has {dim}")

    scalar = None
    block = None
    ball = None
    if fam in (Family.EDEN, Family.TQ_MSE, Family.TQ_PROD):
        base_bits = bits - 1 if fam is Family.TQ_PROD else bits
        if isinstance(codebook, ScalarCodebook):
            scalar = codebook
            if scalar.bits != base_bits:
                raise ConfigError(f"codebook has {scalar.bits} bits, scheme needs {base_bits}")
        elif codebook is not None:
            raise ConfigError("coordinate-wise families need a scalar codebook")
        elif base_bits >= 1:
            target = "gaussian" if fam is Family.EDEN else (scalar_target or "spherical")
            if target == "gaussian":
                scalar = gaussian_codebook(base_bits)
            elif target == "spherical":
                if dim < 4:
                    raise DimensionError("the spherical-marginal codebook needs d >= 4")
                scalar = spherical_codebook(base_bits, dim)
            else:
                raise ConfigError(f"unknown scalar target {target!r}")
    elif fam is Family.BLOCK:
        if codebook is None:
            block = load_pretrained(p, bits)
        elif isinstance(codebook, BlockCodebook):
            block = codebook
        else:
            raise ConfigError("the block family needs a block codebook")
        if block.p != p or block.bits != bits:
            raise ConfigError(f"codebook is p={block.p}, b={block.bits}; scheme needs p={p}, b={bits}")
        ball = np.ascontiguousarray(block.ball_centroids(dim))
        ball.setflags(write=False)
        if lut is not None:
            lut.check_codebook(block)
    if lut is not None and fam is not Family.BLOCK:
        raise ConfigError("lookup-table assignment applies to the block family only")
    qjl_seed = derive_seed(rotation.seed, "qjl")
    return SchemeConfig(fam, var, bits, dim, rotation, p, scalar, block, lut, qjl_seed, ball)


def with_rotation(cfg: SchemeConfig, rotation: RotationOperator) -> SchemeConfig:
    """Copy of ``cfg`` that uses a different rotation (and matching sketch seed)."""
    if rotation.dim != cfg.dim:
        raise DimensionError("rotation dimension differs from the scheme")
    return SchemeConfig(
        cfg.family, cfg.variant, cfg.bits, cfg.dim, rotation, cfg.block_size, cfg.scalar,
        cfg.block, cfg.lut, derive_seed(rotation.seed, "qjl"), cfg._ball,
    )


def padded_dim(dim: int, block_size: int = 1, backend: str = "haar") -> int:
    """Smallest dimension >= ``dim`` accepted by the block size and rotation backend."""
    if backend == "fast":
        d = 1
        while d < max(dim, 2):
            d *= 2
        if d % block_size:
            raise ConfigError(f"no power-of-two dimension is divisible by p={block_size}")
        return d
    d = max(dim, 2)
    return d + (-d) % block_size


# ---------------------------------------------------------------- RabitQ ---


def rabitq_grid(u: np.ndarray, alpha: float, bits: int) -> np.ndarray:
    """``Q_b(u / alpha)`` with ``Q_b(v) = sgn(v) min(floor|v| + 1/2, 2^(b-1) - 1/2)``."""
    v = np.asarray(u, dtype=np.float64) / alpha
    mag = np.minimum(np.floor(np.abs(v)) + 0.5, (1 << (bits - 1)) - 0.5)
    return np.where(v < 0, -mag, mag)


def rabitq_objective(u: np.ndarray, alpha: float, bits: int) -> float:
    """Per-coordinate loss ``(1/d) sum_j (u_j - alpha Q_b(u_j / alpha))^2``."""
    u = np.asarray(u, dtype=np.float64)
    return float(np.mean((u - alpha * rabitq_grid(u, alpha, bits)) ** 2))


def rabitq_search(u: np.ndarray, bits: int) -> Tuple[np.ndarray, np.ndarray]:
    """Exact minimizer of the RabitQ scale objective for each row of ``u``.

    For fixed grid codes ``g`` the best scale is ``<u, g> / |g|^2`` and the loss
    is ``|u|^2 - <u, g>^2 / |g|^2``. As alpha decreases from infinity, ``|g_j|``
    steps from ``k - 1/2`` to ``k + 1/2`` at ``alpha = |u_j| / k``. Sweeping all
    these breakpoints in order visits every code vector the grid can produce,
    so the best visited state is the global minimizer over alpha > 0.

    Args:
        u: Rows in the sqrt(d) frame, shape ``(n, d)``.
        bits: Bits per coordinate.

    Returns:
        Tuple of half-integer codes ``g`` (same shape as ``u``) and the
        least-squares scale ``alpha = <u, g> / |g|^2`` per row.
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    n, d = u.shape
    top = (1 << (bits - 1)) - 1
    sign = np.where(u < 0, -1.0, 1.0)
    a = np.abs(u)
    mags = np.empty_like(u)
    if top == 0:
        mags.fill(0.5)
    else:
        lo, hi = rabitq_sweep(a, a.sum(axis=1), top)
        # Threshold between the last crossed and the first uncrossed key.
        thr = np.where(np.isinf(hi), np.inf, 0.5 * (lo + hi))
        with np.errstate(invalid="ignore"):
            steps = np.floor(a * thr[:, None])
        mags[:] = 0.5 + np.where(a == 0, 0.0, np.minimum(steps, top))
    g = sign * mags
    alpha = np.einsum("ij,ij->i", u, g) / np.einsum("ij,ij->i", g, g)
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        bad = int(np.flatnonzero(~(np.isfinite(alpha) & (alpha > 0)))[0])
        raise SearchError(
            f"scale search failed on row {bad}: alpha={alpha[bad]!r}, |u|={np.linalg.norm(u[bad]):.6g}"
        )
    return g, alpha


# ------------------------------------------------------------------ QJL ---


@lru_cache(maxsize=4)
def qjl_sketch(dim: int, seed: int) -> np.ndarray:
    """The ``dim x dim`` standard Gaussian sketch for ``seed`` (read-only, cached)."""
    s = stream(seed, 0).standard_normal((dim, dim))
    s.setflags(write=False)
    return s


@lru_cache(maxsize=4)
def _qjl_sketch_t(dim: int, seed: int) -> np.ndarray:
    t = np.ascontiguousarray(qjl_sketch(dim, seed).T)
    t.setflags(write=False)
    return t


def qjl_encode_batch(r: np.ndarray, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sign bits of ``S r`` (True for >= 0) and ``|r|`` for each row of ``r``."""
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    proj = rowwise_matmul(np.ascontiguousarray(r), _qjl_sketch_t(r.shape[1], seed))
    return proj >= 0, np.sqrt(np.sum(r * r, axis=1))


def qjl_encode(r: np.ndarray, seed: int) -> Tuple[np.ndarray, float]:
    """One-bit sketch of a residual vector.

    Args:
        r: Vector of length d.
        seed: Sketch seed; the sketch is regenerated from it, never stored.

    Returns:
        Tuple of d sign bits and the residual norm.
    """
    bits, norms = qjl_encode_batch(np.asarray(r)[None, :], seed)
    return bits[0], float(norms[0])


def qjl_reconstruct(bits: np.ndarray, r_norm: np.ndarray, seed: int) -> np.ndarray:
    """``sqrt(pi/2)/d * |r| * S^T sign`` for each row; its inner product with y is the estimate."""
    bits = np.atleast_2d(bits)
    dim = bits.shape[1]
    signs = np.where(bits, 1.0, -1.0)
    back = rowwise_matmul(signs, qjl_sketch(dim, seed))
    return back * (QJL_SCALE / dim * np.asarray(r_norm, dtype=np.float64))[:, None]


def qjl_estimate(y: np.ndarray, bits: np.ndarray, r_norm: float, seed: int) -> float:
    """Estimate ``<y, r>`` as ``sqrt(pi/2)/d * |r| * <S y, sign(S r)>``; 0 when ``|r| = 0``."""
    if r_norm == 0:
        return 0.0
    y = np.asarray(y, dtype=np.float64)
    dim = y.shape[0]
    sy = qjl_sketch(dim, seed) @ y
    signs = np.where(np.asarray(bits), 1.0, -1.0)
    return float(QJL_SCALE / dim * r_norm * np.dot(sy, signs))


# --------------------------------------------------------------- coding ---


class Encoded(NamedTuple):
    codes: np.ndarray  # (n, n_symbols) int64
    zbar: np.ndarray  # (n, d) reconstruction in the rotated frame
    aux: Optional[np.ndarray]  # per-row side value (RabitQ alpha) or None


def encode_rotated(cfg: SchemeConfig, z: np.ndarray) -> Encoded:
    """Encode rotated unit rows ``z`` (shape ``(n, d)``); no sketch for ``tq-prod``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n, d = z.shape
    root = math.sqrt(d)
    fam = cfg.family
    if fam is Family.RABITQ:
        g, alpha = rabitq_search(z * root, cfg.bits)
        offset = ((1 << cfg.bits) - 1) / 2.0
        codes = (g + offset).astype(np.int64)
        zbar = g / np.sqrt(np.sum(g * g, axis=1))[:, None]
        return Encoded(codes, zbar, alpha)
    if fam is Family.BLOCK:
        p = cfg.block_size
        blocks = z.reshape(-1, p)
        if cfg.lut is not None:
            scale = root if cfg.lut.frame == "scaled" else 1.0
            idx = cfg.lut.assign(blocks * scale)
        else:
            idx, _ = nearest_centroid(blocks, cfg.block_centroids())
        zbar = cfg.block_centroids()[idx].reshape(n, d)
        return Encoded(idx.reshape(n, -1), zbar, None)
    if cfg.scalar is None:  # tq-prod with a zero-bit base
        return Encoded(np.zeros((n, d), dtype=np.int64), np.zeros((n, d)), None)
    idx = cfg.scalar.assign(z * root)
    zbar = cfg.scalar.centroids[idx] / root
    return Encoded(idx, zbar, None)


def decode_rotated(cfg: SchemeConfig, codes: np.ndarray) -> np.ndarray:
    """Rebuild ``z_bar`` from unpacked codes."""
    codes = np.atleast_2d(codes)
    n = codes.shape[0]
    d = cfg.dim
    fam = cfg.family
    if fam is Family.RABITQ:
        g = codes - ((1 << cfg.bits) - 1) / 2.0
        return g / np.sqrt(np.sum(g * g, axis=1))[:, None]
    if fam is Family.BLOCK:
        return cfg.block_centroids()[codes].reshape(n, d)
    if cfg.scalar is None:
        return np.zeros((n, d))
    return cfg.scalar.centroids[codes] / math.sqrt(d)


def scale_factors(cfg: SchemeConfig, rho: np.ndarray, psi2: np.ndarray, on_degenerate: str = "raise") -> np.ndarray:
    """Variant rescaling ``S`` per row.

    Args:
        cfg: Scheme.
        rho: Stored alignments.
        psi2: ``|z_bar|^2`` per row.
        on_degenerate: ``raise`` or ``raw`` (use S=1) when ``|rho| < RHO_MIN``
            under the ``ub`` variant.
    """
    rho = np.asarray(rho, dtype=np.float64)
    if cfg.family is Family.TQ_PROD or cfg.variant is Variant.RAW:
        return np.ones_like(rho)
    if cfg.variant is Variant.BSM:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(psi2 > 0, rho / psi2, 0.0)
    small = np.abs(rho) < RHO_MIN
    if np.any(small):
        if on_degenerate != "raw":
            i = int(np.flatnonzero(small)[0])
            raise DegenerateAlignmentError(
                f"alignment {rho[i]:.3g} below {RHO_MIN:g} on row {i}; use the raw variant"
            )
    with np.errstate(divide="ignore"):
        return np.where(small, 1.0, 1.0 / np.where(small, 1.0, rho))


@dataclass(frozen=True, eq=False)
class QuantizedBatch:
    """Packed codes and float32 side scalars for a batch of vectors.

    Attributes:
        tag: Scheme tag (see :attr:`SchemeConfig.tag`).
        rotation_seed: Seed of the rotation used for encoding.
        dim: Operating dimension.
        codes: ``(n, ceil(b d / 8))`` packed code bytes.
        rho: Alignment per vector.
        norm: Input norm per vector.
        aux: RabitQ scale or residual norm per vector, else None.
    """

    tag: str
    rotation_seed: int
    dim: int
    codes: np.ndarray
    rho: np.ndarray
    norm: np.ndarray
    aux: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.codes.shape[0])

    def __getitem__(self, i: int) -> "QuantizedVector":
        return QuantizedVector(
            self.tag, self.rotation_seed, self.dim, self.codes[i].tobytes(), float(self.rho[i]),
            float(self.norm[i]), None if self.aux is None else float(self.aux[i]),
        )


@dataclass(frozen=True)
class QuantizedVector:
    """One quantized vector: exactly ``b d`` code bits plus side scalars."""

    tag: str
    rotation_seed: int
    dim: int
    codes: bytes
    rho: float
    input_norm: float
    aux: Optional[float] = None

    def as_batch(self) -> QuantizedBatch:
        aux = None if self.aux is None else np.array([self.aux], dtype=np.float32)
        return QuantizedBatch(
            self.tag, self.rotation_seed, self.dim, np.frombuffer(self.codes, dtype=np.uint8)[None, :].copy(),
            np.array([self.rho], dtype=np.float32), np.array([self.input_norm], dtype=np.float32), aux,
        )


def _layout(cfg: SchemeConfig):
    if cfg.family is Family.TQ_PROD:
        return [(cfg.dim, cfg.bits - 1), (cfg.dim, 1)]
    return [(cfg.n_symbols, cfg.symbol_width)]


def _check_batch(cfg: SchemeConfig, qb: QuantizedBatch) -> None:
    if qb.tag != cfg.tag or qb.rotation_seed != cfg.rotation.seed or qb.dim != cfg.dim:
        raise ConfigError(
            f"batch was encoded with {qb.tag} (seed {qb.rotation_seed}, d={qb.dim}); "
            f"scheme is {cfg.tag} (seed {cfg.rotation.seed}, d={cfg.dim})"
        )


def _rows(cfg: SchemeConfig, x: np.ndarray) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != cfg.dim:
        raise DimensionError(f"expected rows of length {cfg.dim}, got shape {arr.shape}")
    return arr


def quantize_batch(cfg: SchemeConfig, x: np.ndarray) -> QuantizedBatch:
    """Quantize each row of ``x``; rows are normalized and their norms stored.

    Args:
        cfg: Scheme.
        x: Array of shape ``(n, d)``; zero rows are rejected.

    Returns:
        The packed batch.
    """
    x = _rows(cfg, x)
    norms = np.sqrt(np.sum(x * x, axis=1))
    zero = np.flatnonzero(~(norms > 0))
    if zero.size:
        raise DataError(f"cannot quantize a zero (or non-finite) vector at row {int(zero[0])}")
    xn = x / norms[:, None]
    z = cfg.rotation.apply(xn)
    enc = encode_rotated(cfg, z)
    rho = np.sum(z * enc.zbar, axis=1)
    aux = enc.aux
    fields = [(enc.codes, cfg.symbol_width)]
    if cfg.family is Family.TQ_PROD:
        xbar = cfg.rotation.inverse_apply(enc.zbar)
        signs, r_norm = qjl_encode_batch(xn - xbar, cfg.qjl_seed)
        fields.append((signs.astype(np.int64), 1))
        aux = r_norm
    packed = pack_fields(fields)
    return QuantizedBatch(
        cfg.tag, cfg.rotation.seed, cfg.dim, packed, rho.astype(np.float32), norms.astype(np.float32),
        None if aux is None else np.asarray(aux).astype(np.float32),
    )


def quantize(cfg: SchemeConfig, x: np.ndarray) -> QuantizedVector:
    """Quantize one vector (normalized internally; the norm is stored)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("quantize expects a single vector; use quantize_batch for rows")
    return quantize_batch(cfg, x[None, :])[0]


def unpack_batch(cfg: SchemeConfig, qb: QuantizedBatch) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Unpacked symbol codes and (for ``tq-prod``) the sketch sign bits."""
    parts = unpack_fields(qb.codes, _layout(cfg))
    if cfg.family is Family.TQ_PROD:
        return parts[0], parts[1].astype(bool)
    return parts[0], None


def _reconstruct_rotated(cfg: SchemeConfig, qb: QuantizedBatch, on_degenerate: str):
    codes, signs = unpack_batch(cfg, qb)
    zbar = decode_rotated(cfg, codes)
    psi2 = np.sum(zbar * zbar, axis=1)
    scale = scale_factors(cfg, qb.rho, psi2, on_degenerate)
    return zbar, scale, signs


def dequantize_batch(cfg: SchemeConfig, qb: QuantizedBatch, on_degenerate: str = "raise") -> np.ndarray:
    """Reconstruct ``norm * S * R^T z_bar`` (plus the sketch term for ``tq-prod``)."""
    _check_batch(cfg, qb)
    zbar, scale, signs = _reconstruct_rotated(cfg, qb, on_degenerate)
    out = cfg.rotation.inverse_apply(zbar) * scale[:, None]
    if signs is not None:
        out = out + qjl_reconstruct(signs, qb.aux, cfg.qjl_seed)
    return out * qb.norm.astype(np.float64)[:, None]


def dequantize(cfg: SchemeConfig, qv: QuantizedVector, on_degenerate: str = "raise") -> np.ndarray:
    return dequantize_batch(cfg, qv.as_batch(), on_degenerate)[0]


def estimate_ip_batch(cfg: SchemeConfig, qb: QuantizedBatch, y: np.ndarray, on_degenerate: str = "raise") -> np.ndarray:
    """Inner-product estimates between every stored vector and every query.

    Works in the rotated frame: ``<R^T z_bar, y> = <z_bar, R y>``.

    Args:
        cfg: Scheme.
        qb: Stored batch of n vectors.
        y: One query of length d, or queries of shape ``(q, d)``.
        on_degenerate: See :func:`scale_factors`.

    Returns:
        Array of shape ``(n,)`` for one query, else ``(q, n)``.
    """
    _check_batch(cfg, qb)
    ys = np.asarray(y, dtype=np.float64)
    single = ys.ndim == 1
    ys = np.atleast_2d(ys)
    if ys.shape[1] != cfg.dim:
        raise DimensionError(f"query length {ys.shape[1]} differs from scheme dimension {cfg.dim}")
    zbar, scale, signs = _reconstruct_rotated(cfg, qb, on_degenerate)
    ry = cfg.rotation.apply(ys)
    est = (ry @ zbar.T) * scale[None, :]
    if signs is not None:
        sy = ys @ qjl_sketch(cfg.dim, cfg.qjl_seed).T
        pm = np.where(signs, 1.0, -1.0)
        est = est + (sy @ pm.T) * (QJL_SCALE / cfg.dim * qb.aux.astype(np.float64))[None, :]
    est = est * qb.norm.astype(np.float64)[None, :]
    return est[0] if single else est


def estimate_ip(cfg: SchemeConfig, qv: QuantizedVector, y: np.ndarray, on_degenerate: str = "raise") -> float:
    """Estimate ``<x, y>`` from one quantized vector.

    The ``ub`` variants return the ratio estimate ``<x_bar, y> / rho``;
    ``tq-prod`` returns ``<x_bar, y>`` plus the sketch estimate of the residual
    term; ``bsm`` and ``raw`` return ``<dequantize(qv), y>``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise DimensionError("estimate_ip expects one query vector")
    batch = qv.as_batch()
    _check_batch(cfg, batch)
    if cfg.family is not Family.TQ_PROD:
        return float(estimate_ip_batch(cfg, batch, y, on_degenerate)[0])
    codes, signs = unpack_batch(cfg, batch)
    xbar = cfg.rotation.inverse_apply(decode_rotated(cfg, codes)[0])
    base = float(np.dot(xbar, y))
    resid = qjl_estimate(y, signs[0], float(batch.aux[0]), cfg.qjl_seed)
    return (base + resid) * qv.input_norm
