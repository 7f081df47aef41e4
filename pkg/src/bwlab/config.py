"""Declarative experiment configs: flat key=value text, comma-separated lists.

The format is deliberately minimal and diff-friendly: one `key = value` per
line, `#` comments, exactly one list syntax (commas).  Unknown keys are
errors, as are values outside their documented ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .errors import ParseError, ValidationError

KINDS = ("convergence", "snr_sweep", "n_scaling", "contraction", "truncation", "mixing_checks")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: which study to run and every knob it reads.

    seeds, when empty, defaults to (seed,); t defaults to 4 ceil(ln n).
    snr is the standard-deviation ratio ||mu||/sigma unless snr_is_squared.
    """

    kind: str
    d: int = 10
    n: int = 1000
    t: int = 0
    rho: float = 0.6
    snr: float = 1.5
    snr_grid: tuple = ()
    snr_is_squared: bool = False
    b_bound: float = 0.0
    init_radius_frac: float = 0.25
    n_inits: int = 5
    seed: int = 0
    seeds: tuple = ()
    k: int = 16
    k_grid: tuple = ()
    n_grid: tuple = ()
    trials: int = 40
    probes: int = 40
    mc_sequences: int = 60
    seq_len: int = 50
    l_max: int = 8
    output_dir: str = "out"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho must lie in [0, 1), got {self.rho}")
        if self.b_bound == 0.0:
            object.__setattr__(self, "b_bound", max(self.rho, 1e-3))
        if not self.rho <= self.b_bound < 1.0:
            raise ValidationError(f"b_bound must satisfy rho <= b < 1, got {self.b_bound}")
        if not 0.0 < self.init_radius_frac <= 1.0:
            raise ValidationError(f"init_radius_frac must lie in (0, 1], got {self.init_radius_frac}")
        for name in ("d", "n", "n_inits", "trials", "probes", "mc_sequences", "seq_len"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.snr <= 0.0:
            raise ValidationError(f"snr must be positive, got {self.snr}")
        if self.t == 0:
            object.__setattr__(self, "t", 4 * math.ceil(math.log(self.n)))
        if not self.seeds:
            object.__setattr__(self, "seeds", (self.seed,))
        for name in ("snr_grid", "seeds", "k_grid", "n_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.kind == "snr_sweep" and not self.snr_grid:
            object.__setattr__(self, "snr_grid", (1.0, 1.5, 2.0, 3.0))
        if self.kind == "n_scaling" and not self.n_grid:
            object.__setattr__(self, "n_grid", (500, 1000, 2000, 4000, 8000))
        if self.kind in ("truncation", "mixing_checks") and not self.k_grid:
            object.__setattr__(self, "k_grid", tuple(range(0, 17, 2)))

    def snr_std(self, value: float | None = None) -> float:
        """||mu||/sigma implied by an snr entry under the configured convention."""
        v = self.snr if value is None else value
        return math.sqrt(v) if self.snr_is_squared else v

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                if not v:
                    continue
                v = ",".join(_fmt_scalar(item) for item in v)
            else:
                v = _fmt_scalar(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _fmt_scalar(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_LIST_KEYS = {"snr_grid", "seeds", "k_grid", "n_grid"}
_INT_KEYS = {"d", "n", "t", "n_inits", "seed", "k", "trials", "probes",
             "mc_sequences", "seq_len", "l_max"}
_FLOAT_KEYS = {"rho", "snr", "b_bound", "init_radius_frac"}
_BOOL_KEYS = {"snr_is_squared"}
_STR_KEYS = {"kind", "output_dir"}


def _parse_scalar(key: str, raw: str, lineno: int):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _BOOL_KEYS:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise ParseError(f"line {lineno}: cannot parse {key} = {raw!r}") from exc


def parse_config_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELD_TYPES:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ParseError(f"line {lineno}: duplicate key {key!r}")
        if key in _LIST_KEYS:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = int if key in ("seeds", "k_grid", "n_grid") else float
            try:
                values[key] = tuple(kind(s) for s in items)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: cannot parse list {key} = {raw!r}") from exc
        else:
            values[key] = _parse_scalar(key, raw, lineno)
    if "kind" not in values:
        raise ValidationError("config is missing the required key 'kind'")
    return ExperimentConfig(**values)


def parse_config(path) -> ExperimentConfig:
    """Parse and validate a config file; unknown keys are errors."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
