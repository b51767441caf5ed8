"""One-dimensional Lloyd-Max codebooks for rotated coordinates.

Two unit-variance targets are supported, both expressed in the sqrt(d)
rescaled frame ``u = sqrt(d) * s`` where ``s`` is a coordinate of a uniformly
random unit vector:

* ``gaussian``: the standard normal limit.
* ``spherical``: the exact marginal ``f_{1,d}(s) ∝ (1 - s^2)^((d-3)/2)`` on
  [-1, 1], rescaled to [-sqrt(d), sqrt(d)].

Cell integrals use composite Gauss-Legendre rules. For the spherical target the
substitution ``s = sin(theta)`` turns the density into ``cos(theta)^(d-2)``,
which is smooth up to the endpoints for every d >= 4.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import linalg, special

from .errors import ConfigError, ConvergenceError, FormatError
from .io_utils import atomic_write_text

GAUSSIAN_TAIL = 12.0
DEFAULT_PANELS = 16
DEFAULT_NODES = 24


@lru_cache(maxsize=None)
def _gl_rule(panels: int, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = (x + 1.0) / 2.0
    w = w / 2.0
    edges = np.arange(panels) / panels
    xs = (edges[:, None] + x[None, :] / panels).ravel()
    ws = np.tile(w / panels, panels)
    return xs, ws


class GaussianTarget:
    """Standard normal density, truncated at +-12 for quadrature."""

    name = "gaussian"
    dim = 0

    def __init__(self, panels: int = DEFAULT_PANELS, nodes: int = DEFAULT_NODES):
        self.panels = panels
        self.nodes = nodes
        self.halfwidth = GAUSSIAN_TAIL

    def pdf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)

    def cdf(self, u: np.ndarray) -> np.ndarray:
        return special.ndtr(u)

    def quantile(self, q: np.ndarray) -> np.ndarray:
        return special.ndtri(q)

    def moments(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return the zeroth, first and second moments of the density on each [lo, hi]."""
        a = np.clip(lo, -self.halfwidth, self.halfwidth)
        b = np.clip(hi, -self.halfwidth, self.halfwidth)
        xs, ws = _gl_rule(self.panels, self.nodes)
        width = (b - a)[:, None]
        u = a[:, None] + width * xs[None, :]
        f = self.pdf(u) * ws[None, :] * width
        return f.sum(axis=1), (f * u).sum(axis=1), (f * u * u).sum(axis=1)

    def key(self) -> Tuple[str, int]:
        return (self.name, 0)


class SphericalTarget:
    """Exact coordinate marginal of a uniform point on S^{d-1}, in the sqrt(d) frame."""

    name = "spherical"

    def __init__(self, dim: int, panels: int = DEFAULT_PANELS, nodes: int = DEFAULT_NODES):
        dim = int(dim)
        if dim < 4:
            raise ConfigError(f"spherical target needs d >= 4, got {dim}")
        self.dim = dim
        self.panels = panels
        self.nodes = nodes
        self.scale = math.sqrt(dim)
        self.halfwidth = min(GAUSSIAN_TAIL, self.scale)
        self.log_norm = (
            math.lgamma(dim / 2.0) - 0.5 * math.log(math.pi) - math.lgamma((dim - 1) / 2.0)
        )

    def pdf(self, u: np.ndarray) -> np.ndarray:
        """Density of ``u = sqrt(d) s``."""
        s = np.asarray(u, dtype=np.float64) / self.scale
        inside = np.abs(s) < 1.0
        one_minus = np.where(inside, 1.0 - s * s, 1.0)
        val = np.exp(self.log_norm + 0.5 * (self.dim - 3) * np.log(one_minus)) / self.scale
        return np.where(inside, val, 0.0)

    def cdf(self, u: np.ndarray) -> np.ndarray:
        s = np.clip(np.asarray(u, dtype=np.float64) / self.scale, -1.0, 1.0)
        half = 0.5 * (self.dim - 1)
        return special.betainc(half, half, (1.0 + s) / 2.0)

    def quantile(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        # s^2 ~ Beta(1/2, (d-1)/2); use the symmetric half for accuracy.
        t = np.abs(2.0 * q - 1.0)
        s = np.sqrt(special.betaincinv(0.5, 0.5 * (self.dim - 1), t))
        return np.sign(q - 0.5) * s * self.scale

    def moments(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = np.clip(lo, -self.halfwidth, self.halfwidth) / self.scale
        b = np.clip(hi, -self.halfwidth, self.halfwidth) / self.scale
        ta = np.arcsin(a)
        tb = np.arcsin(b)
        xs, ws = _gl_rule(self.panels, self.nodes)
        width = (tb - ta)[:, None]
        theta = ta[:, None] + width * xs[None, :]
        cos = np.cos(theta)
        f = np.exp(self.log_norm + (self.dim - 2) * np.log(np.maximum(cos, 1e-300)))
        f = f * ws[None, :] * width
        u = self.scale * np.sin(theta)
        return f.sum(axis=1), (f * u).sum(axis=1), (f * u * u).sum(axis=1)

    def key(self) -> Tuple[str, int]:
        return (self.name, self.dim)


Target = Union[GaussianTarget, SphericalTarget]


def make_target(name: str, dim: int = 0, panels: int = DEFAULT_PANELS, nodes: int = DEFAULT_NODES) -> Target:
    if name == "gaussian":
        return GaussianTarget(panels, nodes)
    if name == "spherical":
        return SphericalTarget(dim, panels, nodes)
    raise ConfigError(f"unknown scalar target {name!r}")


@dataclass(frozen=True, eq=False)
class ScalarCodebook:
    """Sorted scalar centroids in the sqrt(d) rescaled frame.

    Attributes:
        bits: Bits per coordinate (``len(centroids) == 2**bits``).
        centroids: Strictly increasing centroid array (read-only).
        target: Target density name, ``"gaussian"`` or ``"spherical"``.
        dim: Ambient dimension for the spherical target, 0 for Gaussian.
        distortion: Expected squared error ``e_b`` under the target.
        second_moment: ``m_b = E[Q(U)^2]`` under the target.
        iterations: Lloyd iterations used in training (0 if loaded).
    """

    bits: int
    centroids: np.ndarray
    target: str
    dim: int
    distortion: float
    second_moment: float
    iterations: int = 0

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def thresholds(self) -> np.ndarray:
        c = self.centroids
        return (c[:-1] + c[1:]) / 2.0

    def assign(self, u: np.ndarray) -> np.ndarray:
        """Nearest-centroid indices; a point on a threshold maps to the lower index."""
        return np.searchsorted(self.thresholds, u, side="left").astype(np.int64)

    def to_text(self) -> str:
        lines = [f"scalar {self.target} b={self.bits} d={self.dim}"]
        lines += ["%.17g" % c for c in self.centroids]
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_text(path, self.to_text())


def _cells(centroids: np.ndarray, halfwidth: float) -> Tuple[np.ndarray, np.ndarray]:
    t = (centroids[:-1] + centroids[1:]) / 2.0
    lo = np.concatenate(([-halfwidth], t))
    hi = np.concatenate((t, [halfwidth]))
    return lo, hi


def _evaluate(centroids: np.ndarray, target: Target) -> Tuple[float, float, np.ndarray, np.ndarray]:
    lo, hi = _cells(centroids, target.halfwidth)
    m0, m1, m2 = target.moments(lo, hi)
    err = float(np.sum(m2 - 2.0 * centroids * m1 + centroids * centroids * m0))
    second = float(np.sum(centroids * centroids * m0))
    return err, second, m0, m1


def codebook_from_centroids(
    centroids: np.ndarray, target: str = "gaussian", dim: int = 0, iterations: int = 0
) -> ScalarCodebook:
    """Wrap explicit centroids, computing distortion by quadrature."""
    c = np.array(centroids, dtype=np.float64).ravel()
    if c.size < 1:
        raise ConfigError("codebook needs at least one centroid")
    if c.size > 1 and np.any(np.diff(c) <= 0):
        raise ConfigError("centroids must be strictly increasing")
    size = c.size
    bits = size.bit_length() - 1 if size & (size - 1) == 0 else -1
    tgt = make_target(target, dim)
    err, second, _, _ = _evaluate(c, tgt)
    c.setflags(write=False)
    return ScalarCodebook(bits, c, tgt.name, tgt.dim, err, second, iterations)


def eval_scalar_distortion(
    cb: ScalarCodebook, panels: int = DEFAULT_PANELS, nodes: int = DEFAULT_NODES
) -> Tuple[float, float]:
    """Recompute ``(e_b, m_b)`` for a codebook by quadrature against its target.

    Args:
        cb: Codebook to evaluate.
        panels: Gauss-Legendre panels per cell.
        nodes: Nodes per panel.

    Returns:
        Tuple of the expected squared error and the second moment of the output.
    """
    err, second, _, _ = _evaluate(cb.centroids, make_target(cb.target, cb.dim, panels, nodes))
    return err, second


def lloyd_step(centroids: np.ndarray, target: Target) -> np.ndarray:
    """One Lloyd update: replace every centroid by its cell's conditional mean."""
    _, _, m0, m1 = _evaluate(centroids, target)
    return m1 / m0


def _newton_step(c: np.ndarray, mapped: np.ndarray, m0: np.ndarray, target: Target) -> np.ndarray:
    """Newton step for the fixed point ``c = T(c)`` of the Lloyd map.

    Each centroid depends only on its two neighbouring thresholds, so the
    Jacobian of ``T`` is tridiagonal and the step costs O(K).
    """
    t = (c[:-1] + c[1:]) / 2.0
    ft = target.pdf(t)
    upper = np.zeros_like(c)  # dT_i / dt_i
    lower = np.zeros_like(c)  # dT_i / dt_{i-1}
    upper[:-1] = ft * (t - mapped[:-1]) / m0[:-1]
    lower[1:] = ft * (mapped[1:] - t) / m0[1:]
    size = c.size
    banded = np.zeros((3, size))
    banded[0, 1:] = -0.5 * upper[:-1]
    banded[1, :] = 1.0 - 0.5 * (upper + lower)
    banded[2, :-1] = -0.5 * lower[1:]
    return c + linalg.solve_banded((1, 1), banded, mapped - c)


def _train(target: Target, bits: int, tol: float, max_iter: int) -> ScalarCodebook:
    if not 1 <= bits <= 8:
        raise ConfigError(f"bits must lie in [1, 8], got {bits}")
    if tol <= 0:
        raise ConfigError("tol must be positive")
    size = 1 << bits
    c = target.quantile((np.arange(size) + 0.5) / size)
    err, _, m0, m1 = _evaluate(c, target)
    prev = math.inf
    move = math.inf
    for it in range(1, max_iter + 1):
        mapped = m1 / m0
        move = float(np.max(np.abs(mapped - c)))
        if move < tol and abs(prev - err) <= 1e-13 * err:
            c = mapped
            err, second, _, _ = _evaluate(c, target)
            c.setflags(write=False)
            return ScalarCodebook(bits, c, target.name, target.dim, err, second, it)
        prev = err
        # Plain Lloyd contracts slowly for large K; a safeguarded Newton step
        # is accepted only if it keeps the order and does not raise the error.
        step = mapped
        if size > 2:
            cand = _newton_step(c, mapped, m0, target)
            if np.all(np.diff(cand) > 0) and np.all(np.abs(cand) < target.halfwidth):
                cand_eval = _evaluate(cand, target)
                if cand_eval[0] <= _evaluate(mapped, target)[0]:
                    c = cand
                    err, _, m0, m1 = cand_eval
                    continue
        c = step
        err, _, m0, m1 = _evaluate(c, target)
    raise ConvergenceError(
        f"Lloyd-Max did not converge in {max_iter} iterations (last move {move:.3g})",
        last_iterate=c,
    )


def lloyd_max_gaussian(bits: int, tol: float = 1e-12, max_iter: int = 10_000) -> ScalarCodebook:
    """Train the Lloyd-Max codebook for the standard normal density.

    Args:
        bits: Bits per coordinate, 1 to 8.
        tol: Convergence threshold on the largest centroid movement.
        max_iter: Iteration cap before raising ``ConvergenceError``.

    Returns:
        The stationary codebook with distortion and second moment filled in.
    """
    return _train(GaussianTarget(), bits, tol, max_iter)


def lloyd_max_spherical(bits: int, dim: int, tol: float = 1e-12, max_iter: int = 10_000) -> ScalarCodebook:
    """Train the Lloyd-Max codebook for the exact spherical coordinate marginal.

    Centroids are returned in the sqrt(d) rescaled frame, so they are directly
    comparable with :func:`lloyd_max_gaussian`.
    """
    return _train(SphericalTarget(dim), bits, tol, max_iter)


@lru_cache(maxsize=64)
def gaussian_codebook(bits: int) -> ScalarCodebook:
    """Cached :func:`lloyd_max_gaussian` with default tolerances."""
    return lloyd_max_gaussian(bits)


@lru_cache(maxsize=64)
def spherical_codebook(bits: int, dim: int) -> ScalarCodebook:
    """Cached :func:`lloyd_max_spherical` with default tolerances."""
    return lloyd_max_spherical(bits, dim)


def parse_scalar_codebook(text: str, source: Optional[str] = None) -> ScalarCodebook:
    where = f" in {source}" if source else ""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"empty scalar codebook{where}")
    head = lines[0].split()
    try:
        if len(head) != 4 or head[0] != "scalar":
            raise ValueError
        target = head[1]
        bits = int(head[2].removeprefix("b="))
        dim = int(head[3].removeprefix("d="))
        values = [float(v) for v in lines[1:]]
    except ValueError:
        raise FormatError(f"malformed scalar codebook{where}: {lines[0]!r}") from None
    if len(values) != 1 << bits:
        raise FormatError(f"expected {1 << bits} centroids{where}, found {len(values)}")
    return codebook_from_centroids(np.array(values), target, dim)


def load_scalar_codebook(path: Union[str, Path]) -> ScalarCodebook:
    return parse_scalar_codebook(Path(path).read_text(), str(path))
