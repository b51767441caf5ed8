"""Closed-form constants for rotation-based quantizers.

All Gamma ratios are evaluated in log space so the formulas stay finite for
dimensions in the hundreds of thousands.
"""

import math
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import optimize, special

from .errors import ConfigError

# Normalized second moments of the best known tessellations in 1, 2 and 3
# dimensions; the 3-D value is the body-centred cubic lattice (an upper bound).
TESSELLATION_G = {
    1: 1.0 / 12.0,
    2: 5.0 / (36.0 * math.sqrt(3.0)),
    3: 19.0 / (192.0 * 2.0 ** (1.0 / 3.0)),
}


def _check_dim(d: float, minimum: float = 3) -> None:
    if d < minimum:
        raise ConfigError(f"dimension must be >= {minimum}, got {d}")


def shannon_constant(d: float) -> float:
    """Leading constant ``c_d`` of the Shannon lower bound on the sphere."""
    _check_dim(d)
    k = d - 1.0
    log_c = (
        math.log(k / (2.0 * math.pi * math.e))
        + (2.0 / k) * (0.5 * d * math.log(math.pi) - math.lgamma(d / 2.0))
        + (special.digamma(0.5) - special.digamma(d / 2.0)) / k
    )
    return math.exp(log_c)


def shannon_lower_bound(d: float, b: float) -> float:
    """Lower bound on the MSE of any b-bit-per-coordinate quantizer of S^{d-1}.

    Args:
        d: Dimension, at least 3.
        b: Bits per coordinate (real-valued, b >= 0).

    Returns:
        ``c_d * 4^(-b d / (d - 1))``.
    """
    if b < 0:
        raise ConfigError("bits must be non-negative")
    return shannon_constant(d) * math.exp(-b * d / (d - 1.0) * math.log(4.0))


def ideal_sphere_constant(d: float) -> float:
    """Constant ``C_d`` of the idealized whole-sphere codebook upper bound."""
    _check_dim(d)
    k = d - 1.0
    inner = math.log(2.0 * math.sqrt(math.pi)) + math.lgamma((d + 1.0) / 2.0) - math.lgamma(d / 2.0)
    return math.exp(math.lgamma(1.0 + 2.0 / k) + (2.0 / k) * inner)


def block_moment_factor(p: int, d: float) -> float:
    """High-rate density factor ``J_{p,d}`` of the exact block marginal."""
    if p not in TESSELLATION_G:
        raise ConfigError(f"block size must be 1, 2 or 3, got {p}")
    if d < p + 3:
        raise ConfigError(f"need d >= p + 3, got d={d}, p={p}")
    beta = p * (d - p - 2.0) / (2.0 * (p + 2.0))
    log_j = (
        math.log(math.pi)
        + math.lgamma(d / 2.0)
        - math.lgamma((d - p) / 2.0)
        + (p + 2.0) / p * (math.lgamma(beta + 1.0) - math.lgamma(beta + 1.0 + p / 2.0))
    )
    return math.exp(log_j)


def highrate_constant(p: int, d: float) -> float:
    """Coefficient of ``4^(-b)`` in the many-centroid MSE of block quantization.

    Returns ``d * G_p * J_{p,d}``; for p=3 ``G_p`` is an upper bound, so the
    result is an upper-bound coefficient.
    """
    j = block_moment_factor(p, d)
    return d * TESSELLATION_G[p] * j


def highrate_limit(p: int) -> float:
    """Large-d limit of :func:`highrate_constant`."""
    if p not in TESSELLATION_G:
        raise ConfigError(f"block size must be 1, 2 or 3, got {p}")
    return TESSELLATION_G[p] * math.pi * 2.0 ** (-p / 2.0) * (2.0 * (p + 2.0) / p) ** ((p + 2.0) / 2.0)


def ratio_ip_coefficient(e: float) -> float:
    """``e / (1 - e)``: the inner-product constant of a ratio quantizer."""
    if not 0.0 <= e < 1.0:
        raise ConfigError(f"distortion must lie in [0, 1), got {e}")
    return e / (1.0 - e)


def ratio_ip_constant(e: float, d: Optional[float] = None) -> float:
    """Predicted worst-case inner-product MSE ``e / ((1 - e)(d - 1))``.

    With ``d=None`` the ``1/(d-1)`` factor is left out.
    """
    coef = ratio_ip_coefficient(e)
    return coef if d is None else coef / (d - 1.0)


def _normal_moments(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zeroth to second moments of N(0,1) on [a, b] with 0 <= a < b <= inf."""
    pdf_a = np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
    pdf_b = np.where(np.isinf(b), 0.0, np.exp(-0.5 * np.where(np.isinf(b), 0.0, b) ** 2) / math.sqrt(2.0 * math.pi))
    m0 = special.ndtr(-a) - special.ndtr(-b)
    m1 = pdf_a - pdf_b
    bpdf = np.where(np.isinf(b), 0.0, np.where(np.isinf(b), 0.0, b) * pdf_b)
    m2 = m0 + a * pdf_a - bpdf
    return m0, m1, m2


def rabitq_gaussian_objective(alpha: float, bits: int) -> float:
    """Expected ``(R - alpha Q_b(R / alpha))^2`` for ``R ~ N(0, 1)``.

    ``Q_b(u) = sgn(u) min(floor|u| + 1/2, 2^(b-1) - 1/2)``; the integral is
    split over the cells where ``Q_b`` is constant.
    """
    if alpha <= 0:
        raise ConfigError("alpha must be positive")
    top = (1 << (bits - 1)) - 1
    k = np.arange(top + 1, dtype=np.float64)
    lo = k * alpha
    hi = np.append(k[1:] * alpha, np.inf)
    level = alpha * (k + 0.5)
    m0, m1, m2 = _normal_moments(lo, hi)
    return float(2.0 * np.sum(m2 - 2.0 * level * m1 + level * level * m0))


def rabitq_gaussian_optimum(bits: int) -> Tuple[float, float]:
    """Minimize :func:`rabitq_gaussian_objective` over alpha.

    A coarse grid locates the basin, then a bounded scalar search refines it.

    Returns:
        Tuple ``(alpha_star, phi_min)``.
    """
    if bits < 1:
        raise ConfigError("bits must be >= 1")
    grid = np.linspace(0.005, 4.0, 800)
    vals = np.array([rabitq_gaussian_objective(a, bits) for a in grid])
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(
        rabitq_gaussian_objective,
        bounds=(lo, hi),
        args=(bits,),
        method="bounded",
        options={"xatol": 1e-12, "maxiter": 500},
    )
    return float(res.x), float(res.fun)


def theory_table(dims, ps=(1, 2, 3), bits=(1, 2, 3, 4)) -> Dict[str, object]:
    """Constants for a grid of dimensions, as plain JSON-ready data."""
    rows = []
    for d in dims:
        row = {
            "d": int(d),
            "c_d": shannon_constant(d),
            "C_d": ideal_sphere_constant(d),
            "shannon_bound": {str(b): shannon_lower_bound(d, b) for b in bits},
            "highrate": {},
        }
        for p in ps:
            if d >= p + 3:
                row["highrate"][str(p)] = {
                    "coefficient": highrate_constant(p, d),
                    "upper_bound_tessellation": p == 3,
                }
        rows.append(row)
    return {
        "report_version": 1,
        "highrate_limit": {str(p): highrate_limit(p) for p in ps},
        "rows": rows,
    }
