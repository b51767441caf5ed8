"""Block marginals of uniform spherical vectors and p-dimensional codebooks.

A p-coordinate block of a uniform point on S^{d-1} has squared radius
``Beta(p/2, (d-p)/2)`` and an independent uniform direction. In the
``gaussian`` limit the sqrt(d) rescaled block is standard normal in R^p.

Codebooks are trained by sample-based Lloyd iterations with k-means++
seeding. With symmetrization enabled the codebook is constrained to sign
pairs ``[h, -h]`` and each Lloyd update is the exact update for the
sign-symmetrized sample, so the pairing holds to machine precision. It is off
by default: optimal codebooks for small K are not sign-symmetric (8 points in
R^3, 16 points in R^2) and the constraint costs about 2% distortion there.

Two frames are used:

* ``scaled``: the sqrt(d) rescaled frame (unit variance per coordinate).
  Gaussian-limit codebooks live here and are independent of d.
* ``ball``: unscaled rotated blocks inside the unit p-ball, tied to one d.
"""

import hashlib
import math
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import integrate, stats
from scipy.spatial import cKDTree

from . import _kernels
from .errors import ConfigError, FormatError, InsufficientSamplesError
from .io_utils import atomic_write_text
from .scalar_codebook import gaussian_codebook
from .seeding import derive_seed, stream

FRAMES = ("ball", "scaled")
MODES = ("exact", "gaussian")
KDTREE_MIN_CENTROIDS = 64
# KD-tree query threads; results do not depend on it.
WORKERS = 1


class BlockMarginal:
    """Distribution of one p-block of a uniformly random unit vector.

    Args:
        p: Block size.
        d: Ambient dimension (ignored in ``gaussian`` mode).
        mode: ``"exact"`` for the finite-d law, ``"gaussian"`` for the limit.
    """

    def __init__(self, p: int, d: int = 0, mode: str = "exact"):
        if mode not in MODES:
            raise ConfigError(f"unknown marginal mode {mode!r}")
        if p < 1:
            raise ConfigError(f"block size must be >= 1, got {p}")
        self.p = int(p)
        self.mode = mode
        if mode == "gaussian":
            self.d = 0
            return
        if d <= p:
            raise ConfigError(f"exact block marginal needs d > p, got d={d}, p={p}")
        self.d = int(d)
        self._log_norm = (
            math.lgamma(d / 2.0) - 0.5 * p * math.log(math.pi) - math.lgamma((d - p) / 2.0)
        )
        if self.p <= 3:
            total = self.total_mass()
            if abs(total - 1.0) > 1e-6:
                raise ConfigError(f"block density integrates to {total!r}, expected 1")

    @property
    def frame(self) -> str:
        return "scaled" if self.mode == "gaussian" else "ball"

    @classmethod
    def exact(cls, p: int, d: int) -> "BlockMarginal":
        return cls(p, d, "exact")

    @classmethod
    def gaussian(cls, p: int) -> "BlockMarginal":
        return cls(p, 0, "gaussian")

    def density(self, z: np.ndarray) -> np.ndarray:
        """Closed-form density of the block; zero outside the open unit ball."""
        if self.mode != "exact":
            raise ConfigError("density is defined for the exact marginal only")
        z = np.asarray(z, dtype=np.float64)
        r2 = np.sum(z * z, axis=-1) if z.ndim and z.shape[-1] == self.p else z * z
        inside = r2 < 1.0
        expo = 0.5 * (self.d - self.p - 2)
        safe = np.where(inside, 1.0 - r2, 1.0)
        val = np.exp(self._log_norm + expo * np.log(safe))
        return np.where(inside, val, 0.0)

    def total_mass(self) -> float:
        """Integral of the density over the ball, in radial form."""
        p = self.p
        surface = 2.0 * math.pi ** (p / 2.0) / math.gamma(p / 2.0)
        expo = 0.5 * (self.d - self.p - 2)

        def radial(r: float) -> float:
            return r ** (p - 1) * math.exp(self._log_norm + expo * math.log1p(-r * r)) if r < 1 else 0.0

        # The mass concentrates near r ~ sqrt(p/d); split there for accuracy.
        knot = min(0.5, 8.0 * math.sqrt(p / self.d))
        a, _ = integrate.quad(radial, 0.0, knot, epsabs=1e-13, epsrel=1e-12, limit=200)
        b, _ = integrate.quad(radial, knot, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
        return surface * (a + b)

    def radius_squared_law(self):
        """Frozen scipy distribution of ``|z|^2`` (exact mode)."""
        return stats.beta(self.p / 2.0, (self.d - self.p) / 2.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` blocks, shape ``(n, p)``, in this marginal's frame."""
        g = rng.standard_normal((n, self.p))
        if self.mode == "gaussian":
            return g
        r2 = rng.beta(self.p / 2.0, (self.d - self.p) / 2.0, size=n)
        norms = np.linalg.norm(g, axis=1)
        return g * (np.sqrt(r2) / norms)[:, None]

    def describe(self) -> str:
        return f"gaussian(p={self.p})" if self.mode == "gaussian" else f"exact(p={self.p},d={self.d})"


def sample_block(marginal: BlockMarginal, rng: np.random.Generator) -> np.ndarray:
    """Draw a single block from ``marginal``."""
    return marginal.sample(1, rng)[0]


def density(marginal: BlockMarginal, z: np.ndarray) -> np.ndarray:
    return marginal.density(z)


@dataclass(frozen=True, eq=False)
class BlockCodebook:
    """K = 2^(b p) centroids in R^p.

    Attributes:
        p: Block size.
        bits: Bits per coordinate ``b``.
        centroids: Array of shape ``(K, p)`` (read-only).
        frame: ``"scaled"`` or ``"ball"``.
        dim: Ambient dimension for ball-frame codebooks, 0 for scaled.
        seed: Training seed (0 when not trained here).
        meta: Training metadata (samples, restarts, per-coordinate distortion).
    """

    p: int
    bits: int
    centroids: np.ndarray
    frame: str
    dim: int = 0
    seed: int = 0
    meta: Dict[str, Union[int, float, str]] = field(default_factory=dict)

    def __post_init__(self):
        c = self.centroids
        if c.ndim != 2 or c.shape[1] != self.p:
            raise ConfigError(f"centroids must have shape (K, {self.p}), got {c.shape}")
        if self.frame not in FRAMES:
            raise ConfigError(f"unknown frame {self.frame!r}")
        if self.frame == "ball":
            if self.dim <= self.p:
                raise ConfigError("ball-frame codebooks need the ambient dimension")
            norms = np.linalg.norm(c, axis=1)
            if np.any(norms > 1.0 + 1e-12):
                raise ConfigError(f"ball-frame centroid with norm {norms.max():.6g} > 1")

    @property
    def size(self) -> int:
        return int(self.centroids.shape[0])

    def scaled_centroids(self) -> np.ndarray:
        """Centroids in the sqrt(d) rescaled frame."""
        if self.frame == "scaled":
            return self.centroids
        return self.centroids * math.sqrt(self.dim)

    def ball_centroids(self, dim: int) -> np.ndarray:
        """Centroids for unscaled blocks of a ``dim``-dimensional unit vector."""
        if self.frame == "ball":
            if dim != self.dim:
                raise ConfigError(f"codebook trained for d={self.dim}, requested d={dim}")
            return self.centroids
        out = self.centroids / math.sqrt(dim)
        if np.any(np.linalg.norm(out, axis=1) > 1.0):
            raise ConfigError(f"codebook does not fit in the unit ball at d={dim}")
        return out

    def to_ball(self, dim: int) -> "BlockCodebook":
        c = np.array(self.ball_centroids(dim))
        c.setflags(write=False)
        return BlockCodebook(self.p, self.bits, c, "ball", dim, self.seed, dict(self.meta))

    def to_text(self) -> str:
        lines = [f"block p={self.p} b={self.bits} frame={self.frame} d={self.dim} seed={self.seed}"]
        lines += [" ".join("%.17g" % v for v in row) for row in self.centroids]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """SHA-256 of the canonical text form; binds lookup tables to this codebook."""
        return hashlib.sha256(self.to_text().encode("ascii")).hexdigest()

    def save(self, path: Union[str, Path]) -> None:
        """Write the canonical text plus ``#`` metadata lines (ignored on load)."""
        extra = "".join(f"# {k}={self.meta[k]}\n" for k in sorted(self.meta))
        atomic_write_text(path, self.to_text() + extra)


def _meta_value(text: str) -> Union[int, float, str]:
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def parse_block_codebook(text: str, source: Optional[str] = None) -> BlockCodebook:
    where = f" in {source}" if source else ""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise FormatError(f"empty block codebook{where}")
    meta: Dict[str, Union[int, float, str]] = {}
    for ln in text.splitlines():
        if ln.startswith("#") and "=" in ln:
            key, val = (t.strip() for t in ln[1:].split("=", 1))
            meta[key] = _meta_value(val)
    head = lines[0].split()
    try:
        if len(head) != 6 or head[0] != "block":
            raise ValueError
        fields = dict(tok.split("=", 1) for tok in head[1:])
        p = int(fields["p"])
        bits = int(fields["b"])
        frame = fields["frame"]
        dim = int(fields["d"])
        seed = int(fields["seed"])
    except (ValueError, KeyError):
        raise FormatError(f"malformed block codebook header{where}: {lines[0]!r}") from None
    size = 1 << (bits * p)
    if len(lines) - 1 != size:
        raise FormatError(f"expected {size} centroids{where}, found {len(lines) - 1}")
    try:
        cent = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    except ValueError as exc:
        raise FormatError(f"non-numeric centroid{where}: {exc}") from None
    if cent.shape != (size, p):
        raise FormatError(f"centroid rows must have {p} coordinates{where}")
    cent.setflags(write=False)
    return BlockCodebook(p, bits, cent, frame, dim, seed, meta)


def load_block_codebook(path: Union[str, Path]) -> BlockCodebook:
    return parse_block_codebook(Path(path).read_text(), str(path))


def nearest_centroid(points: np.ndarray, centroids: np.ndarray, workers: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Exact nearest centroid for each row; ties resolve to the lowest index.

    Returns:
        Tuple of int64 labels and squared distances.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    cent = np.ascontiguousarray(centroids, dtype=np.float64)
    if cent.shape[0] < KDTREE_MIN_CENTROIDS or pts.shape[0] < 4 * cent.shape[0]:
        return _kernels.assign_full(pts, cent)
    tree = cKDTree(cent)
    dist, idx = tree.query(pts, k=2, workers=WORKERS if workers is None else workers)
    labels = idx[:, 0].copy()
    tie = dist[:, 0] == dist[:, 1]
    labels[tie] = np.minimum(idx[tie, 0], idx[tie, 1])
    diff = pts - cent[labels]
    return labels.astype(np.int64), np.einsum("ij,ij->i", diff, diff)


class LloydResult(NamedTuple):
    centroids: np.ndarray
    distortion: float
    history: Tuple[float, ...]
    iterations: int
    converged: bool


def _neighbour_lists(cent: np.ndarray, width: int) -> Tuple[np.ndarray, np.ndarray]:
    k = cent.shape[0]
    if width >= k:
        cand = np.tile(np.arange(k, dtype=np.int64), (k, 1))
        return cand, np.full(k, np.inf)
    tree = cKDTree(cent)
    dist, idx = tree.query(cent, k=width + 1)
    return np.ascontiguousarray(idx[:, :width], dtype=np.int64), dist[:, width].copy()


def _update(x, labels, err, cent, symmetric):
    k, p = cent.shape
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.empty((k, p))
    for t in range(p):
        sums[:, t] = np.bincount(labels, weights=x[:, t], minlength=k)
    if symmetric:
        half = k // 2
        n_pair = counts[:half] + counts[half:]
        s_pair = sums[:half] - sums[half:]
        new_half = cent[:half].copy()
        live = n_pair > 0
        new_half[live] = s_pair[live] / n_pair[live, None]
        empty = np.flatnonzero(~live)
        if empty.size:
            worst = np.argsort(-err, kind="stable")[: empty.size]
            new_half[empty] = x[worst]
        return np.vstack([new_half, -new_half])
    new = cent.copy()
    live = counts > 0
    new[live] = sums[live] / counts[live, None]
    empty = np.flatnonzero(~live)
    if empty.size:
        worst = np.argsort(-err, kind="stable")[: empty.size]
        new[empty] = x[worst]
    return new


def lloyd(
    x: np.ndarray,
    init: np.ndarray,
    symmetric: bool = True,
    tol: float = 1e-10,
    max_iter: int = 1000,
    neighbours: int = 32,
) -> LloydResult:
    """Run Lloyd iterations on a fixed sample until the distortion settles.

    Args:
        x: Training sample, shape ``(n, p)``.
        init: Initial centroids, shape ``(K, p)``; sign-paired if ``symmetric``.
        symmetric: Keep the codebook of the form ``[h, -h]``.
        tol: Stop once one iteration lowers the mean squared distance by less.
        max_iter: Iteration cap.
        neighbours: Width of the per-centroid candidate lists.

    Returns:
        Final centroids, mean squared distance per block and the trajectory.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    cent = np.ascontiguousarray(init, dtype=np.float64)
    labels, err = nearest_centroid(x, cent)
    history = [float(np.mean(err))]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        cent = _update(x, labels, err, cent, symmetric)
        cand, radius = _neighbour_lists(cent, neighbours)
        labels, err, _ = _kernels.assign_local(x, cent, labels, cand, radius)
        history.append(float(np.mean(err)))
        if history[-2] - history[-1] < tol:
            converged = True
            break
    return LloydResult(cent, history[-1], tuple(history), it, converged)


def default_samples(p: int, bits: int) -> int:
    return max(1_000_000, 4000 * (1 << (bits * p)))


PRETRAINED_SEED = 1

# Settings used for the codebooks shipped in ``sphereq/data``. The larger
# codebooks use fewer restarts and a looser stopping threshold to keep
# single-core training time within tens of minutes.
PRETRAINED_SETTINGS: Dict[Tuple[int, int], Dict[str, float]] = {
    (2, 1): {"n_samples": 1_000_000, "restarts": 8, "max_iter": 1000, "tol": 1e-9},
    (2, 2): {"n_samples": 1_000_000, "restarts": 8, "max_iter": 1000, "tol": 1e-9},
    (2, 3): {"n_samples": 1_000_000, "restarts": 4, "max_iter": 1000, "tol": 1e-7},
    (2, 4): {"n_samples": 1_024_000, "restarts": 2, "max_iter": 1000, "tol": 1e-7},
    (3, 1): {"n_samples": 1_000_000, "restarts": 8, "max_iter": 1000, "tol": 1e-9},
    (3, 2): {"n_samples": 1_000_000, "restarts": 8, "max_iter": 1000, "tol": 1e-9},
    (3, 3): {"n_samples": 2_048_000, "restarts": 2, "max_iter": 1000, "tol": 1e-7},
    (3, 4): {"n_samples": 4_096_000, "restarts": 1, "max_iter": 500, "tol": 1e-7},
}


def pretrained_name(p: int, bits: int) -> str:
    return f"block_p{p}_b{bits}.txt"


def train_pretrained(p: int, bits: int, seed: int = PRETRAINED_SEED) -> BlockCodebook:
    """Retrain one shipped Gaussian-limit codebook with its recorded settings."""
    try:
        settings = PRETRAINED_SETTINGS[(p, bits)]
    except KeyError:
        raise ConfigError(f"no pretrained settings for p={p}, b={bits}") from None
    return fit_block_codebook(
        p,
        bits,
        BlockMarginal.gaussian(p),
        n_samples=int(settings["n_samples"]),
        restarts=int(settings["restarts"]),
        seed=seed,
        tol=settings["tol"],
        max_iter=int(settings["max_iter"]),
    )


def load_pretrained(p: int, bits: int) -> BlockCodebook:
    """Load a shipped Gaussian-limit codebook (scaled frame)."""
    if p == 1:
        scalar = gaussian_codebook(bits)
        return codebook_from_scalar(scalar.centroids, bits, scalar.distortion)
    ref = resources.files("sphereq").joinpath("data", pretrained_name(p, bits))
    if not ref.is_file():
        raise ConfigError(
            f"no shipped codebook for p={p}, b={bits}; train one with "
            "'sphereq codebook build --kind block'"
        )
    return parse_block_codebook(ref.read_text(), str(ref))


def fit_block_codebook(
    p: int,
    bits: int,
    marginal: BlockMarginal,
    n_samples: Optional[int] = None,
    restarts: int = 8,
    seed: int = 0,
    symmetric: bool = False,
    tol: float = 1e-10,
    max_iter: int = 1000,
    init_samples: Optional[int] = None,
) -> BlockCodebook:
    """Train a K = 2^(b p) codebook for ``marginal`` by restarted Lloyd.

    Training always runs in the sqrt(d) rescaled frame; codebooks for an exact
    marginal are returned in the ball frame of that marginal's d.

    Args:
        p: Block size (1, 2 or 3).
        bits: Bits per coordinate.
        marginal: Training distribution; its block size must equal ``p``.
        n_samples: Training sample size (default ``max(10^6, 4000 K)``).
        restarts: Independent k-means++ seedings; the best run is kept.
        seed: Base seed for samples and seedings.
        symmetric: Constrain the codebook to sign pairs.
        tol: Lloyd stopping threshold on the per-iteration decrease.
        max_iter: Lloyd iteration cap per restart.
        init_samples: Subsample size for k-means++ (default ``min(n, 40 K)``).

    Returns:
        The trained codebook with per-coordinate distortion in ``meta``.
    """
    if p not in (1, 2, 3):
        raise ConfigError(f"block size must be 1, 2 or 3, got {p}")
    if marginal.p != p:
        raise ConfigError(f"marginal has p={marginal.p}, requested p={p}")
    if bits < 1:
        raise ConfigError("bits must be >= 1")
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    size = 1 << (bits * p)
    n = default_samples(p, bits) if n_samples is None else int(n_samples)
    if size > n:
        raise InsufficientSamplesError(f"{size} centroids need at least {size} samples, got {n}")
    x = marginal.sample(n, stream(derive_seed(seed, "block-train", "samples")))
    if marginal.mode == "exact":
        x = x * math.sqrt(marginal.d)
    m = min(n, init_samples or 40 * size)
    best: Optional[LloydResult] = None
    best_restart = -1
    for r in range(restarts):
        rng = stream(derive_seed(seed, "block-train", "restart", r))
        sub = x[rng.choice(n, size=m, replace=False)] if m < n else x
        pick = size // 2 if symmetric else size
        idx = _kernels.kmeanspp(np.ascontiguousarray(sub), pick, rng.random(pick), symmetric)
        init = sub[idx]
        if symmetric:
            init = np.vstack([init, -init])
        res = lloyd(x, init, symmetric, tol, max_iter)
        if best is None or res.distortion < best.distortion:
            best = res
            best_restart = r
    assert best is not None
    cent = best.centroids
    frame, dim = "scaled", 0
    if marginal.mode == "exact":
        cent = cent / math.sqrt(marginal.d)
        frame, dim = "ball", marginal.d
    cent = np.ascontiguousarray(cent)
    cent.setflags(write=False)
    meta = {
        "marginal": marginal.describe(),
        "n_samples": n,
        "restarts": restarts,
        "best_restart": best_restart,
        "iterations": best.iterations,
        "converged": int(best.converged),
        "symmetric": int(symmetric),
        "distortion": best.distortion / p,
    }
    return BlockCodebook(p, bits, cent, frame, dim, seed, meta)


class DistortionEstimate(NamedTuple):
    mean: float
    stderr: float
    n: int


def eval_block_distortion(
    cb: BlockCodebook, marginal: BlockMarginal, n_eval: int = 1_000_000, seed: int = 0
) -> DistortionEstimate:
    """Held-out estimate of the per-coordinate distortion of ``cb``.

    The value is reported in unit-variance units, i.e. ``E min|u - o|^2 / p``
    in the sqrt(d) rescaled frame, so scaled and ball codebooks are comparable.

    Args:
        cb: Codebook to evaluate.
        marginal: Evaluation law; ``gaussian`` needs a scaled codebook and
            ``exact`` a ball codebook with the same d.
        n_eval: Number of fresh samples.
        seed: Base seed; samples come from a stream disjoint from training.
    """
    if marginal.p != cb.p:
        raise ConfigError("block size of codebook and marginal differ")
    if marginal.frame != cb.frame or (cb.frame == "ball" and cb.dim != marginal.d):
        raise ConfigError(
            f"frame mismatch: codebook is {cb.frame}(d={cb.dim}), marginal is {marginal.describe()}"
        )
    z = marginal.sample(n_eval, stream(derive_seed(seed, "block-eval")))
    _, err = nearest_centroid(z, cb.centroids)
    scale = marginal.d if cb.frame == "ball" else 1.0
    per = err * (scale / cb.p)
    return DistortionEstimate(float(np.mean(per)), float(np.std(per, ddof=1) / math.sqrt(n_eval)), n_eval)


def empirical_distortion(cb: BlockCodebook, x: np.ndarray) -> float:
    """Mean per-coordinate squared distance of fixed points ``x`` (codebook frame)."""
    _, err = nearest_centroid(x, cb.centroids)
    return float(np.mean(err) / cb.p)


def codebook_from_scalar(scalar_centroids: np.ndarray, bits: int, distortion: Optional[float] = None) -> BlockCodebook:
    """Lift 1-D scaled-frame centroids to a p=1 block codebook."""
    c = np.array(scalar_centroids, dtype=np.float64).reshape(-1, 1)
    c.setflags(write=False)
    meta: Dict[str, Union[int, float, str]] = {"source": "scalar"}
    if distortion is not None:
        meta["distortion"] = float(distortion)
    return BlockCodebook(1, bits, c, "scaled", 0, 0, meta)
