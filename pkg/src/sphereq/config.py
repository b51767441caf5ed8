"""Run configuration: a flat ``key = value`` text file with a stable hash."""

import hashlib
from dataclasses import dataclass, fields, replace
from typing import Dict, Optional, Tuple

from .errors import ConfigError
from .quantizers import ALLOWED_VARIANTS, DEFAULT_VARIANT, Family, Variant

METRICS = ("mse", "ip", "recall")


@dataclass(frozen=True)
class SchemeSpec:
    """Family, variant and block size; the bit width comes from the run."""

    family: Family
    variant: Variant
    block_size: int = 1

    @classmethod
    def parse(cls, text: str) -> "SchemeSpec":
        """Parse ``family[:variant][:p=N]``, e.g. ``block:ub:p=3``."""
        parts = [t.strip() for t in text.strip().split(":") if t.strip()]
        if not parts:
            raise ConfigError("empty scheme descriptor")
        try:
            fam = Family(parts[0])
        except ValueError:
            raise ConfigError(f"unknown scheme family {parts[0]!r}") from None
        var = DEFAULT_VARIANT[fam]
        p = 1
        for tok in parts[1:]:
            if tok.startswith("p="):
                try:
                    p = int(tok[2:])
                except ValueError:
                    raise ConfigError(f"bad block size in {text!r}") from None
            else:
                try:
                    var = Variant(tok)
                except ValueError:
                    raise ConfigError(f"unknown variant {tok!r} in {text!r}") from None
        if var not in ALLOWED_VARIANTS[fam]:
            raise ConfigError(f"variant {var.value} is not available for {fam.value}")
        if fam is not Family.BLOCK and p != 1:
            raise ConfigError(f"{fam.value} is coordinate-wise; block size must be 1")
        if p < 1:
            raise ConfigError("block size must be positive")
        return cls(fam, var, p)

    def text(self) -> str:
        s = f"{self.family.value}:{self.variant.value}"
        return s + (f":p={self.block_size}" if self.family is Family.BLOCK else "")


def _parse_ints(text: str, key: str) -> Tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated list of integers") from None
    if not vals:
        raise ConfigError(f"{key} is empty")
    return vals


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a benchmark run.

    Two runs with equal configs write byte-identical outputs; :meth:`digest`
    is embedded in every artifact.
    """

    schemes: Tuple[SchemeSpec, ...] = (SchemeSpec(Family.EDEN, Variant.BSM),)
    bits: Tuple[int, ...] = (1, 2, 3, 4)
    dim: int = 1024
    seed: int = 0
    metrics: Tuple[str, ...] = ("mse",)
    mse_trials: int = 10_000
    ip_trials: int = 100_000
    eta: float = 0.0
    backend: str = "haar"
    rounds: int = 3
    assign: str = "exact"
    lut_L: int = 64
    lut_k: int = 8
    dataset: str = ""
    dataset_format: str = "fvecs"
    queries: str = ""
    synthetic_db: int = 10_000
    synthetic_queries: int = 500
    recall_k: Tuple[int, ...] = (1, 10, 100)
    out: str = "report"
    format: str = "json"

    def __post_init__(self):
        for b in self.bits:
            if not 1 <= b <= 8:
                raise ConfigError(f"bits must lie in 1..8, got {b}")
        for m in self.metrics:
            if m not in METRICS:
                raise ConfigError(f"unknown metric {m!r}; choose from {', '.join(METRICS)}")
        if self.assign not in ("exact", "lut"):
            raise ConfigError("assign must be 'exact' or 'lut'")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be 'json' or 'csv'")
        if self.backend not in ("haar", "fast"):
            raise ConfigError("backend must be 'haar' or 'fast'")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")
        if not abs(self.eta) < 1:
            raise ConfigError("eta must satisfy |eta| < 1")

    def to_text(self) -> str:
        """Canonical text form, one ``key = value`` per line in field order."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "schemes":
                v = ",".join(s.text() for s in v)
            elif isinstance(v, tuple):
                v = ",".join(str(t) for t in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
        values: Dict[str, str] = {}
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {n}: expected 'key = value'")
            key, val = (t.strip() for t in line.split("=", 1))
            if key in values:
                raise ConfigError(f"config line {n}: duplicate key {key!r}")
            values[key] = val
        return cls().updated(values)

    def updated(self, values: Dict[str, Optional[str]]) -> "RunConfig":
        """Copy with string-valued overrides (``None`` entries are ignored)."""
        known = {f.name: f for f in fields(self)}
        kw = {}
        for key, val in values.items():
            if val is None:
                continue
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            cur = getattr(self, key)
            try:
                if key == "schemes":
                    kw[key] = tuple(SchemeSpec.parse(t) for t in str(val).split(",") if t.strip())
                elif key == "metrics":
                    kw[key] = tuple(t.strip() for t in str(val).split(",") if t.strip())
                elif isinstance(cur, tuple):
                    kw[key] = _parse_ints(str(val), key)
                elif isinstance(cur, bool):
                    kw[key] = str(val).lower() in ("1", "true", "yes")
                elif isinstance(cur, int):
                    kw[key] = int(val)
                elif isinstance(cur, float):
                    kw[key] = float(val)
                else:
                    kw[key] = str(val)
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot parse {val!r}") from None
        return replace(self, **kw)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_text(fh.read())
