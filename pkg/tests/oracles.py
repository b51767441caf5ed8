"""Independent reference computations used to freeze expected values.

Nothing here imports the library's numerical code: each routine is a direct
evaluation of the defining formula with mpmath, closed-form Gaussian moments
or brute force, so agreement with the library is a genuine cross-check.
"""

import math
from typing import List, Tuple

import mpmath as mp
import numpy as np
from scipy import stats

mp.mp.dps = 30


# --------------------------------------------------------------- theory ---


def shannon_constant(d: int) -> float:
    d = mp.mpf(d)
    return float(
        (d - 1) / (2 * mp.pi * mp.e)
        * (mp.pi ** (d / 2) / mp.gamma(d / 2)) ** (2 / (d - 1))
        * mp.exp((mp.digamma(mp.mpf(1) / 2) - mp.digamma(d / 2)) / (d - 1))
    )


def ideal_sphere_constant(d: int) -> float:
    d = mp.mpf(d)
    return float(
        mp.gamma(1 + 2 / (d - 1)) * (2 * mp.sqrt(mp.pi) * mp.gamma((d + 1) / 2) / mp.gamma(d / 2)) ** (2 / (d - 1))
    )


def block_density_integral(p: int, d: int) -> float:
    """``(int_{B_p} f^{p/(p+2)})^{(p+2)/p}`` by radial quadrature of the block density."""
    p_ = mp.mpf(p)
    d_ = mp.mpf(d)
    norm = mp.gamma(d_ / 2) / (mp.pi ** (p_ / 2) * mp.gamma((d_ - p_) / 2))
    q = p_ / (p_ + 2)
    shell = 2 * mp.pi ** (p_ / 2) / mp.gamma(p_ / 2)
    integrand = lambda r: (norm * (1 - r * r) ** ((d_ - p_ - 2) / 2)) ** q * shell * r ** (p_ - 1)
    inner = [r for r in (1 / mp.sqrt(d_), 4 / mp.sqrt(d_)) if r < 1]
    val = mp.quad(integrand, [0] + inner + [1])
    return float(val ** ((p_ + 2) / p_))


def tessellation_g(p: int) -> float:
    return {1: 1 / 12, 2: 5 / (36 * math.sqrt(3)), 3: 19 / (192 * 2 ** (1 / 3))}[p]


# ------------------------------------------------------------ Lloyd-Max ---


def gaussian_cell_means(edges: np.ndarray) -> np.ndarray:
    """Conditional means of N(0,1) between consecutive edges (closed form)."""
    pdf = stats.norm.pdf(edges)
    mass = np.diff(stats.norm.cdf(edges))
    return (pdf[:-1] - pdf[1:]) / mass


def gaussian_lloyd_max(bits: int, tol: float = 1e-14, max_iter: int = 200_000) -> Tuple[np.ndarray, float]:
    """Plain Lloyd iteration with closed-form Gaussian cell moments."""
    k = 1 << bits
    c = stats.norm.ppf((np.arange(k) + 0.5) / k)
    for _ in range(max_iter):
        edges = np.concatenate([[-np.inf], 0.5 * (c[1:] + c[:-1]), [np.inf]])
        new = gaussian_cell_means(edges)
        if np.max(np.abs(new - c)) < tol:
            c = new
            break
        c = new
    edges = np.concatenate([[-np.inf], 0.5 * (c[1:] + c[:-1]), [np.inf]])
    # E (X - c)^2 = 1 - sum mass * c^2 at a Lloyd fixed point
    mass = np.diff(stats.norm.cdf(edges))
    return c, float(1.0 - np.sum(mass * c * c))


def spherical_cell_mean(a: float, b: float, d: int) -> float:
    """Mean of ``u = sqrt(d) s`` on [a, b] where s is one coordinate of a uniform point on S^{d-1}."""
    k = (d - 3) / 2.0
    dist = stats.beta(0.5, (d - 1) / 2.0)

    def cdf(u):
        if u <= -math.sqrt(d):
            return 0.0
        if u >= math.sqrt(d):
            return 1.0
        t = dist.cdf(u * u / d)
        return 0.5 - 0.5 * t if u < 0 else 0.5 + 0.5 * t

    def antideriv(u):
        # integral of u (1 - u^2/d)^k du, up to the density constant
        u = min(max(u, -math.sqrt(d)), math.sqrt(d))
        return -d / (2.0 * (k + 1.0)) * (1.0 - u * u / d) ** (k + 1.0)

    const = math.exp(math.lgamma(d / 2.0) - math.lgamma((d - 1) / 2.0)) / math.sqrt(math.pi * d)
    return const * (antideriv(b) - antideriv(a)) / (cdf(b) - cdf(a))


# --------------------------------------------------------------- RabitQ ---


def rabitq_gaussian_objective_quad(alpha: float, bits: int) -> float:
    """``E (g - alpha Q_b(g / alpha))^2`` by adaptive quadrature cell by cell."""
    top = (1 << (bits - 1)) - 1
    total = mp.mpf(0)
    a = mp.mpf(alpha)
    for k in range(top + 1):
        lo = k * a
        hi = (k + 1) * a if k < top else mp.inf
        level = a * (k + mp.mpf(1) / 2)
        total += mp.quad(lambda g: (g - level) ** 2 * mp.npdf(g), [lo, hi])
    return float(2 * total)


def rabitq_gaussian_optimum_golden(bits: int, lo: float, hi: float, tol: float = 1e-11) -> Tuple[float, float]:
    """Golden-section minimization of the quadrature objective on [lo, hi]."""
    f = lambda a: rabitq_gaussian_objective_quad(a, bits)
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, e = b - g * (b - a), a + g * (b - a)
    fc, fe = f(c), f(e)
    while b - a > tol:
        if fc < fe:
            b, e, fe = e, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, e, fe
            e = a + g * (b - a)
            fe = f(e)
    x = 0.5 * (a + b)
    return x, f(x)


def rabitq_quantize(u: np.ndarray, alpha: float, bits: int) -> np.ndarray:
    top = (1 << (bits - 1)) - 0.5
    # The grid has no zero level; sgn(0) is taken as +1.
    return np.where(u < 0, -1.0, 1.0) * np.minimum(np.floor(np.abs(u) / alpha) + 0.5, top)


def rabitq_best_cosine_grid(u: np.ndarray, bits: int, n_grid: int = 20_000) -> float:
    """Best ``<u, g>^2 / |g|^2`` over a dense alpha grid (brute force)."""
    best = 0.0
    amax = float(np.max(np.abs(u))) * 4
    for alpha in np.geomspace(amax / 4000, amax, n_grid):
        g = rabitq_quantize(u, alpha, bits)
        best = max(best, float(np.dot(u, g) ** 2 / np.dot(g, g)))
    return best


# ------------------------------------------------------------- geometry ---


def brute_nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid by full enumeration; ties go to the lowest index."""
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def pack_bits_reference(codes: List[int], width: int) -> bytes:
    """Little-endian bit stream: bit j of code i lands at stream position i*width + j."""
    nbits = len(codes) * width
    out = bytearray((nbits + 7) // 8)
    pos = 0
    for c in codes:
        for j in range(width):
            if (c >> j) & 1:
                out[pos >> 3] |= 1 << (pos & 7)
            pos += 1
    return bytes(out)


def qjl_mse_coefficient() -> float:
    """Worst-case ``d * E(sketch estimate - <y, r>)^2 / |r|^2`` for y orthogonal to r."""
    return math.pi / 2.0


def rabitq_search_reference(u, bits):
    """Breakpoint sweep by a full argsort of all ``k / |u_j|`` keys per row."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    n, d = u.shape
    top = (1 << (bits - 1)) - 1
    a = np.abs(u)
    if top == 0:
        return np.where(u < 0, -0.5, 0.5)
    ks = np.arange(1, top + 1, dtype=np.float64)
    mags = np.empty_like(u)
    for i in range(n):
        row = a[i]
        with np.errstate(divide="ignore"):
            keys = (ks[:, None] / row[None, :]).ravel()
        gain_ip = np.broadcast_to(row, (top, d)).ravel()
        gain_nn = np.broadcast_to(2.0 * ks[:, None], (top, d)).ravel()
        order = np.argsort(keys, kind="stable")
        ip = 0.5 * row.sum() + np.cumsum(gain_ip[order])
        nn = 0.25 * d + np.cumsum(gain_nn[order])
        score = np.concatenate([[0.25 * row.sum() ** 2 / (0.25 * d)], ip * ip / nn])
        best = int(np.argmax(score))
        padded = np.concatenate([[0.0], keys[order], [np.inf]])
        hi = padded[best + 1]
        thr = np.inf if np.isinf(hi) else 0.5 * (padded[best] + hi)
        with np.errstate(invalid="ignore"):
            steps = np.floor(row * thr)
        mags[i] = 0.5 + np.where(row == 0, 0.0, np.minimum(steps, top))
    return np.where(u < 0, -1.0, 1.0) * mags
