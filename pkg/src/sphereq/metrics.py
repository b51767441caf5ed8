"""Monte Carlo distortion estimates, retrieval recall and error histograms.

Distortion is measured at the canonical input ``x = e_1`` (and ``y`` in the
span of ``e_1, e_2`` with ``<x, y> = eta``): every scheme here is rotation
invariant, so the worst case over inputs equals the value at any fixed input.
With ``x = e_1`` the rotated input is the first column of the trial's Haar
matrix, so the default ``frames`` method only generates the leading one or
two columns of each rotation (they coincide with those of ``build_haar``).

For ``tq-prod`` the ``frames`` method draws the sketch term from its exact
conditional law given the rotation. Write ``s_i = xi_i r_hat + s_perp_i`` for
the sketch rows; then ``<S y', sign(S r)> = A <r_hat, y'> + N(0, d |P y'|^2)``
with ``A = sum |xi_i|`` and ``P`` the projector orthogonal to ``r``. The
``full`` method instead builds each rotation and sketch explicitly and runs
the library encoder; tests use it to validate the fast path.

Trial ``t`` uses rotation seed ``derive_seed(base, "rotation", t)`` and sketch
stream seed ``derive_seed(base, "qjl", t)``; reductions run in trial order,
so reports replay bit for bit.
"""

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import theory
from .errors import ConfigError, DataError, DegenerateAlignmentError
from .quantizers import (
    QJL_SCALE,
    RHO_MIN,
    Family,
    SchemeConfig,
    Variant,
    dequantize_batch,
    encode_rotated,
    estimate_ip_batch,
    quantize_batch,
    with_rotation,
)
from .rotation import Backend, build_rotation, haar_frames
from .scalar_codebook import gaussian_codebook
from .seeding import derive_seed, stream

REPORT_VERSION = 1
TRIAL_CHUNK = 500
MIN_TRIALS = 100

# Reference constants for d = 1024 (1026 for p = 3): D_MSE, and the scaled
# inner-product error (d - 1) D_IP, or d D_IP for tq-prod.
REFERENCE_CONSTANTS: Dict[Tuple[str, str, int], Dict[int, float]] = {
    ("mse", "eden", 1): {1: 0.363, 2: 0.117, 3: 0.0345, 4: 0.0095},
    ("mse", "rabitq", 1): {1: 0.363, 2: 0.119, 3: 0.0374, 4: 0.0115},
    ("mse", "block", 2): {1: 0.363, 2: 0.107, 3: 0.0297, 4: 0.0078},
    ("mse", "block", 3): {1: 0.357, 2: 0.101, 3: 0.0271, 4: 0.0071},
    ("ip", "eden", 1): {1: 0.571, 2: 0.133, 3: 0.0358, 4: 0.0096},
    ("ip", "rabitq", 1): {1: 0.571, 2: 0.135, 3: 0.0389, 4: 0.0117},
    ("ip", "block", 2): {1: 0.571, 2: 0.120, 3: 0.0306, 4: 0.0078},
    ("ip", "block", 3): {1: 0.553, 2: 0.113, 3: 0.0279, 4: 0.0071},
    ("ip", "tq-prod", 1): {1: 1.57, 2: 0.56, 3: 0.18, 4: 0.047},
}


class IdentityScheme:
    """Zero-error reference scheme: ``z_bar = z`` and ``rho = 1``.

    Useful as a sanity baseline; every distortion it reports is exactly 0.
    """

    tag = "identity"
    family = None
    variant = Variant.RAW
    bits = 0
    block_size = 1

    def __init__(self, dim: int):
        self.dim = int(dim)


Scheme = Union[SchemeConfig, IdentityScheme]


@dataclass
class DistortionReport:
    """One Monte Carlo estimate.

    ``scaled_*`` fields multiply the raw mean by ``d - 1`` for inner-product
    rows of ratio schemes and by ``d`` for ``tq-prod``, matching the way the
    constants are usually quoted. ``scaled_*`` equals the raw mean for MSE rows.
    """

    scheme: str
    family: str
    variant: str
    bits: int
    block_size: int
    d: int
    metric: str
    n_trials: int
    eta: Optional[float]
    mean: float
    stderr: float
    scale: float
    scaled_mean: float
    scaled_stderr: float
    ip_bias_mean: Optional[float] = None
    ip_bias_stderr: Optional[float] = None
    n_degenerate: int = 0
    method: str = "frames"
    predicted: Dict[str, Optional[float]] = field(default_factory=dict)
    seeds: Dict[str, Union[int, str]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @property
    def mse_mean(self) -> Optional[float]:
        return self.mean if self.metric == "mse" else None

    @property
    def mse_stderr(self) -> Optional[float]:
        return self.stderr if self.metric == "mse" else None

    @property
    def ip_mse_mean(self) -> Optional[float]:
        return self.mean if self.metric == "ip" else None

    @property
    def ip_mse_stderr(self) -> Optional[float]:
        return self.stderr if self.metric == "ip" else None


def trial_seeds(base_seed: int, n_trials: int) -> List[int]:
    """Rotation seeds of trials ``0 .. n_trials - 1``."""
    return [derive_seed(base_seed, "rotation", t) for t in range(n_trials)]


def _seed_record(base_seed: int, seeds: Sequence[int]) -> Dict[str, Union[int, str]]:
    h = hashlib.sha256()
    for s in seeds:
        h.update(int(s).to_bytes(8, "little"))
    return {
        "base": int(base_seed),
        "rule": "rotation seed of trial t = derive_seed(base, 'rotation', t); sketch stream = derive_seed(base, 'qjl', t)",
        "count": len(seeds),
        "first": int(seeds[0]) if seeds else 0,
        "last": int(seeds[-1]) if seeds else 0,
        "sha256": h.hexdigest(),
    }


def _prod_draws(base_seed: int, trials: range, dim: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-trial ``A = sum |xi|``, a chi-square(d-1) draw and a standard normal."""
    a = np.empty(len(trials))
    chi = np.empty(len(trials))
    zeta = np.empty(len(trials))
    for i, t in enumerate(trials):
        rng = stream(derive_seed(base_seed, "qjl", t))
        a[i] = np.abs(rng.standard_normal(dim)).sum()
        chi[i] = rng.chisquare(dim - 1)
        zeta[i] = rng.standard_normal()
    return a, chi, zeta


def _encode(cfg: Scheme, z: np.ndarray):
    if isinstance(cfg, IdentityScheme):
        return z.copy(), np.ones(z.shape[0]), None
    enc = encode_rotated(cfg, z)
    rho = np.sum(z * enc.zbar, axis=1).astype(np.float32).astype(np.float64)
    return enc.zbar, rho, enc.aux


def _scales(cfg: Scheme, rho: np.ndarray, zbar: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Scale factors and a mask of usable trials (False for degenerate ``ub``)."""
    ok = np.ones(rho.shape[0], dtype=bool)
    if isinstance(cfg, IdentityScheme) or cfg.family is Family.TQ_PROD or cfg.variant is Variant.RAW:
        return np.ones_like(rho), ok
    if cfg.variant is Variant.BSM:
        psi2 = np.sum(zbar * zbar, axis=1)
        return np.where(psi2 > 0, rho / np.where(psi2 > 0, psi2, 1.0), 0.0), ok
    ok = np.abs(rho) >= RHO_MIN
    return 1.0 / np.where(ok, rho, 1.0), ok


def _is_prod(cfg: Scheme) -> bool:
    return isinstance(cfg, SchemeConfig) and cfg.family is Family.TQ_PROD


def _frames_errors(cfg: Scheme, kind: str, frames: np.ndarray, eta: float, base_seed: int, trials: range):
    if isinstance(cfg, IdentityScheme):
        n = frames.shape[0]
        return np.zeros(n), (np.zeros(n) if kind == "ip" else None), np.ones(n, dtype=bool)
    z = frames[:, :, 0]
    zbar, rho, _ = _encode(cfg, z)
    scale, ok = _scales(cfg, rho, zbar)
    d = z.shape[1]
    if kind == "mse":
        if _is_prod(cfg):
            r = z - zbar
            rn = np.sqrt(np.sum(r * r, axis=1))
            c = QJL_SCALE * rn.astype(np.float32).astype(np.float64) / d
            a, chi, _ = _prod_draws(base_seed, trials, d)
            return (rn - c * a) ** 2 + c * c * d * chi, None, ok
        diff = z - scale[:, None] * zbar
        return np.sum(diff * diff, axis=1), None, ok
    ry = eta * frames[:, :, 0] + math.sqrt(1.0 - eta * eta) * frames[:, :, 1]
    est = scale * np.sum(zbar * ry, axis=1)
    if _is_prod(cfg):
        r = z - zbar
        rn = np.sqrt(np.sum(r * r, axis=1))
        safe = np.where(rn > 0, rn, 1.0)
        proj = np.sum(r * ry, axis=1) / safe
        perp = np.sqrt(np.maximum(np.sum(ry * ry, axis=1) - proj * proj, 0.0))
        c = QJL_SCALE * rn.astype(np.float32).astype(np.float64) / d
        a, _, zeta = _prod_draws(base_seed, trials, d)
        est = est + np.where(rn > 0, c * (a * proj + math.sqrt(d) * perp * zeta), 0.0)
    err = est - eta
    return err * err, err, ok


def _full_errors(cfg: Scheme, kind: str, x: np.ndarray, y: Optional[np.ndarray], seeds: Sequence[int]):
    if isinstance(cfg, IdentityScheme):
        n = len(seeds)
        return np.zeros(n), (np.zeros(n) if kind == "ip" else None), np.ones(n, dtype=bool)
    errs = np.empty(len(seeds))
    signed = np.empty(len(seeds)) if kind == "ip" else None
    ok = np.ones(len(seeds), dtype=bool)
    backend = cfg.rotation.backend.value
    for i, s in enumerate(seeds):
        rot = build_rotation(cfg.dim, s, backend, cfg.rotation.rounds or 3)
        trial = with_rotation(cfg, rot)
        qb = quantize_batch(trial, x[None, :])
        try:
            if kind == "mse":
                xh = dequantize_batch(trial, qb)[0]
                errs[i] = float(np.sum((x - xh) ** 2))
            else:
                e = float(estimate_ip_batch(trial, qb, y)[0]) - float(np.dot(x, y))
                errs[i] = e * e
                signed[i] = e
        except DegenerateAlignmentError:
            ok[i] = False
            errs[i] = 0.0
            if signed is not None:
                signed[i] = 0.0
    return errs, signed, ok


def _scale_for(cfg: Scheme, kind: str, d: int) -> float:
    if kind == "mse":
        return 1.0
    return float(d) if _is_prod(cfg) else float(d - 1)


def _family_name(cfg: Scheme) -> str:
    return "identity" if isinstance(cfg, IdentityScheme) else cfg.family.value


def predicted_constants(cfg: Scheme, kind: str) -> Dict[str, Optional[float]]:
    """Large-d predictions for a scheme, in the same scaling as ``scaled_mean``."""
    if isinstance(cfg, IdentityScheme):
        return {"model": 0.0, "reference": 0.0}
    fam = cfg.family
    b = cfg.bits
    e: Optional[float] = None
    if fam is Family.EDEN:
        e = gaussian_codebook(b).distortion
    elif fam is Family.TQ_MSE:
        e = cfg.scalar.distortion if cfg.scalar is not None else None
    elif fam is Family.RABITQ:
        e = theory.rabitq_gaussian_optimum(b)[1]
    elif fam is Family.BLOCK:
        raw = cfg.block.meta.get("distortion") if cfg.block is not None else None
        e = float(raw) if raw is not None else None
    elif fam is Family.TQ_PROD:
        e = cfg.scalar.distortion if cfg.scalar is not None else 1.0
    model: Optional[float] = None
    if e is not None:
        if fam is Family.TQ_PROD:
            model = 0.5 * math.pi * e
        elif kind == "mse":
            model = theory.ratio_ip_coefficient(e) if cfg.variant is Variant.UB else e
        else:
            model = theory.ratio_ip_coefficient(e) if cfg.variant is Variant.UB else None
    p = cfg.block_size if fam is Family.BLOCK else 1
    ref = REFERENCE_CONSTANTS.get((kind, fam.value, p), {}).get(b)
    if kind == "mse" and cfg.variant is not Variant.BSM:
        ref = None
    if kind == "ip" and fam is not Family.TQ_PROD and cfg.variant is not Variant.UB:
        ref = None
    preds: Dict[str, Optional[float]] = {"model": model, "reference": ref}
    if kind == "mse":
        preds["shannon_bound"] = theory.shannon_lower_bound(cfg.dim, b) if cfg.dim >= 3 else None
    return preds


def _summarize(values: np.ndarray, ok: np.ndarray) -> Tuple[float, float, int]:
    v = values[ok]
    n = v.size
    if n < 2:
        raise DataError("too few usable trials to estimate a standard error")
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(n)), n


def _estimate_many(
    cfgs: Sequence[Scheme],
    kind: str,
    n_trials: int,
    base_seed: int,
    eta: float = 0.0,
    method: str = "frames",
    x: Optional[np.ndarray] = None,
    chunk: int = TRIAL_CHUNK,
) -> List[DistortionReport]:
    if n_trials < MIN_TRIALS:
        raise ConfigError(f"need at least {MIN_TRIALS} trials, got {n_trials}")
    if kind == "ip" and not abs(eta) < 1.0:
        raise ConfigError(f"eta must satisfy |eta| < 1, got {eta}")
    dims = {c.dim for c in cfgs}
    if len(dims) != 1:
        raise ConfigError("schemes evaluated together must share one dimension")
    d = dims.pop()
    if x is not None and method == "frames":
        method = "full"
    if method == "frames":
        for c in cfgs:
            if isinstance(c, SchemeConfig) and c.rotation.backend is not Backend.EXACT_HAAR:
                raise ConfigError("the frames method assumes Haar rotations; use method='full'")
    elif method != "full":
        raise ConfigError(f"unknown method {method!r}")
    seeds = trial_seeds(base_seed, n_trials)
    k = 1 if kind == "mse" else 2
    errs = [np.empty(n_trials) for _ in cfgs]
    signed = [np.empty(n_trials) for _ in cfgs]
    oks = [np.empty(n_trials, dtype=bool) for _ in cfgs]
    if method == "frames":
        for s in range(0, n_trials, chunk):
            trials = range(s, min(s + chunk, n_trials))
            frames = haar_frames(d, seeds[trials.start : trials.stop], k)
            for i, c in enumerate(cfgs):
                e, sg, ok = _frames_errors(c, kind, frames, eta, base_seed, trials)
                errs[i][trials.start : trials.stop] = e
                oks[i][trials.start : trials.stop] = ok
                if sg is not None:
                    signed[i][trials.start : trials.stop] = sg
    else:
        xv = np.zeros(d) if x is None else np.asarray(x, dtype=np.float64)
        if x is None:
            xv[0] = 1.0
        else:
            xv = xv / np.linalg.norm(xv)
        yv = None
        if kind == "ip":
            # y = eta x + sqrt(1 - eta^2) u with u a fixed unit vector orthogonal to x.
            u = np.zeros(d)
            u[1 if abs(xv[1]) < 0.9 else 2] = 1.0
            u -= np.dot(u, xv) * xv
            u /= np.linalg.norm(u)
            yv = eta * xv + math.sqrt(1.0 - eta * eta) * u
        for i, c in enumerate(cfgs):
            e, sg, ok = _full_errors(c, kind, xv, yv, seeds)
            errs[i][:] = e
            oks[i][:] = ok
            if sg is not None:
                signed[i][:] = sg
    reports = []
    for i, c in enumerate(cfgs):
        mean, se, _ = _summarize(errs[i], oks[i])
        scale = _scale_for(c, kind, d)
        rep = DistortionReport(
            scheme=c.tag,
            family=_family_name(c),
            variant=c.variant.value,
            bits=c.bits,
            block_size=c.block_size,
            d=d,
            metric=kind,
            n_trials=n_trials,
            eta=float(eta) if kind == "ip" else None,
            mean=mean,
            stderr=se,
            scale=scale,
            scaled_mean=mean * scale,
            scaled_stderr=se * scale,
            n_degenerate=int(np.count_nonzero(~oks[i])),
            method=method,
            predicted=predicted_constants(c, kind),
            seeds=_seed_record(base_seed, seeds),
        )
        if kind == "ip":
            rep.ip_bias_mean, rep.ip_bias_stderr, _ = _summarize(signed[i], oks[i])
        reports.append(rep)
    return reports


def estimate_dmse(
    cfg: Scheme, n_trials: int = 10_000, base_seed: int = 0, x: Optional[np.ndarray] = None, method: str = "frames"
) -> DistortionReport:
    """Monte Carlo estimate of ``E |x - dequantize(quantize(x))|^2``.

    Args:
        cfg: Scheme to evaluate; its own rotation is replaced per trial.
        n_trials: Number of independent rotations (at least 100).
        base_seed: Seed from which all trial seeds derive.
        x: Optional fixed input (forces the ``full`` method); default ``e_1``.
        method: ``frames`` (fast, Haar only) or ``full``.
    """
    return _estimate_many([cfg], "mse", n_trials, base_seed, method=method, x=x)[0]


def estimate_dip(
    cfg: Scheme, n_trials: int = 100_000, base_seed: int = 0, eta: float = 0.0, method: str = "frames"
) -> DistortionReport:
    """Monte Carlo estimate of ``E (estimate_ip(x, y) - <x, y>)^2`` and of the bias.

    Args:
        cfg: Scheme to evaluate.
        n_trials: Number of independent rotations (at least 100).
        base_seed: Seed from which all trial seeds derive.
        eta: Target inner product ``<x, y>``, ``|eta| < 1``.
        method: ``frames`` or ``full``.
    """
    return _estimate_many([cfg], "ip", n_trials, base_seed, eta=eta, method=method)[0]


def estimate_dmse_many(cfgs: Sequence[Scheme], n_trials: int, base_seed: int = 0) -> List[DistortionReport]:
    """:func:`estimate_dmse` for several schemes on shared rotations."""
    return _estimate_many(list(cfgs), "mse", n_trials, base_seed)


def estimate_dip_many(cfgs: Sequence[Scheme], n_trials: int, base_seed: int = 0, eta: float = 0.0) -> List[DistortionReport]:
    """:func:`estimate_dip` for several schemes on shared rotations."""
    return _estimate_many(list(cfgs), "ip", n_trials, base_seed, eta=eta)


def replay(cfg: Scheme, report: DistortionReport) -> DistortionReport:
    """Re-run the estimate described by ``report`` and check its seed digest."""
    kind = report.metric
    again = _estimate_many([cfg], kind, report.n_trials, int(report.seeds["base"]), eta=report.eta or 0.0, method=report.method)[0]
    if again.seeds["sha256"] != report.seeds["sha256"]:
        raise DataError("seed digest mismatch on replay")
    return again


# -------------------------------------------------------------- retrieval ---


@dataclass
class RecallResult:
    dataset: str
    scheme: str
    bits: int
    ks: List[int]
    recall: List[float]
    n_queries: int
    n_database: int

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def at(self, k: int) -> float:
        return self.recall[self.ks.index(k)]


def _estimates(cfg: Scheme, db: np.ndarray, queries: np.ndarray) -> np.ndarray:
    if isinstance(cfg, IdentityScheme):
        return queries @ db.T
    qb = quantize_batch(cfg, db)
    return estimate_ip_batch(cfg, qb, queries)


def _check_unit(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    if arr.shape[0] == 0:
        raise DataError(f"{name} set is empty")
    norms = np.linalg.norm(arr, axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
    if bad.size:
        raise DataError(f"{name} vector {int(bad[0])} is not unit norm (|v| = {norms[bad[0]]:.6g})")
    return arr


def recall_at_1_at_k(
    db: np.ndarray, queries: np.ndarray, cfg: Scheme, ks: Iterable[int] = (1, 10, 100), dataset: str = "unnamed"
) -> RecallResult:
    """Fraction of queries whose exact top-1 neighbour is in the estimated top-k.

    Only database vectors are quantized. Ties in either ranking resolve to
    the lower database index.
    """
    db = _check_unit("database", db)
    queries = _check_unit("query", queries)
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1:
        raise ConfigError("k values must be positive")
    exact = queries @ db.T
    truth = np.argmax(exact, axis=1)
    est = _estimates(cfg, db, queries)
    rows = np.arange(queries.shape[0])
    target = est[rows, truth]
    above = np.sum(est > target[:, None], axis=1)
    ties_before = np.sum((est == target[:, None]) & (np.arange(db.shape[0])[None, :] < truth[:, None]), axis=1)
    rank = above + ties_before
    recall = [float(np.mean(rank < k)) for k in ks]
    return RecallResult(dataset, cfg.tag, cfg.bits, ks, recall, int(queries.shape[0]), int(db.shape[0]))


@dataclass
class ErrorHistogram:
    edges: List[float]
    counts: List[int]
    mean: float
    stderr: float
    mean_abs_estimate: float
    mean_abs_truth: float
    n: int

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


def empirical_error_histogram(
    cfg: Scheme, db: np.ndarray, queries: np.ndarray, bins: int = 101, halfwidth: Optional[float] = None
) -> ErrorHistogram:
    """Histogram of ``e_ij = estimate(x_i, y_j) - <x_i, y_j>``.

    Bins are symmetric about 0 and ``bins`` is forced odd so that 0 is the
    centre of the middle bin.
    """
    db = _check_unit("database", db)
    queries = _check_unit("query", queries)
    truth = queries @ db.T
    est = _estimates(cfg, db, queries)
    err = (est - truth).ravel()
    bins = int(bins) | 1
    if halfwidth is None:
        halfwidth = float(np.max(np.abs(err))) * (1.0 + 1e-9)
        if halfwidth == 0.0:
            halfwidth = 1e-12
    counts, edges = np.histogram(np.clip(err, -halfwidth, halfwidth), bins=bins, range=(-halfwidth, halfwidth))
    return ErrorHistogram(
        edges.tolist(), counts.tolist(), float(err.mean()), float(err.std(ddof=1) / math.sqrt(err.size)),
        float(np.mean(np.abs(est))), float(np.mean(np.abs(truth))), int(err.size),
    )


# ---------------------------------------------------------------- output ---

CSV_FIELDS = [
    "scheme", "family", "variant", "bits", "block_size", "d", "metric", "n_trials", "eta", "mean", "stderr",
    "scale", "scaled_mean", "scaled_stderr", "ip_bias_mean", "ip_bias_stderr", "n_degenerate", "method",
    "predicted_model", "predicted_reference", "seed_base", "seed_sha256",
]


def reports_to_json(reports: Sequence[DistortionReport], extra: Optional[Dict[str, object]] = None) -> str:
    doc: Dict[str, object] = {"report_version": REPORT_VERSION, "rows": [r.to_dict() for r in reports]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def reports_to_csv(reports: Sequence[DistortionReport], extra: Optional[Dict[str, object]] = None) -> str:
    buf = io.StringIO()
    buf.write(f"# report_version={REPORT_VERSION}\n")
    for key in sorted(extra or {}):
        buf.write(f"# {key}={extra[key]}\n")
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        row = {k: v for k, v in r.to_dict().items() if k in CSV_FIELDS}
        row["predicted_model"] = r.predicted.get("model")
        row["predicted_reference"] = r.predicted.get("reference")
        row["seed_base"] = r.seeds.get("base")
        row["seed_sha256"] = r.seeds.get("sha256")
        writer.writerow({k: ("" if row.get(k) is None else repr(row[k]) if isinstance(row.get(k), float) else row[k]) for k in CSV_FIELDS})
    return buf.getvalue()
