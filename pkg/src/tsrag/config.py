"""Run configuration: defaults, key=value config files, and flag overrides.

A config file holds one ``key=value`` pair per line (blank lines and ``#``
comments ignored). Every key can also be set by the CLI flag of the same
name; flags win over the file, which wins over the defaults. The in-code
field ``lam`` is spelled ``lambda`` in files and flags.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

# field name -> external key
_EXTERNAL_KEYS = {"lam": "lambda"}
_INTERNAL_KEYS = {v: k for k, v in _EXTERNAL_KEYS.items()}

ESTIMATORS = ("biased", "unbiased")
MEDIAN_BANDWIDTH = "median-heuristic"


@dataclass
class RunConfig:
    """Every tunable shared across the pipeline, with its default."""

    window: int = 512
    stride: int = 512
    cap: int = 256
    k: int = 8
    rho: float = 0.6
    probes: int = 4
    d: int = 16
    h: int = 16
    lam: float = 0.1
    seed: int = 0
    estimator: str = "biased"
    bandwidth: float | str = MEDIAN_BANDWIDTH
    horizon: int = 16

    def validate(self) -> "RunConfig":
        if self.window < 2:
            raise ConfigError(f"window={self.window} must be >= 2")
        if self.stride < 1:
            raise ConfigError(f"stride={self.stride} must be >= 1")
        if self.cap < 1:
            raise ConfigError(f"cap={self.cap} must be >= 1")
        if self.k < 1:
            raise ConfigError(f"k={self.k} must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho={self.rho} must lie in [0, 1]")
        if self.probes < 1:
            raise ConfigError(f"probes={self.probes} must be >= 1")
        if self.d < 1:
            raise ConfigError(f"d={self.d} must be >= 1")
        if self.h < 1:
            raise ConfigError(f"h={self.h} must be >= 1")
        if self.lam < 0.0:
            raise ConfigError(f"lambda={self.lam} must be >= 0")
        if self.seed < 0:
            raise ConfigError(f"seed={self.seed} must be >= 0")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(
                f"estimator={self.estimator!r} must be one of {', '.join(ESTIMATORS)}"
            )
        if isinstance(self.bandwidth, str):
            if self.bandwidth != MEDIAN_BANDWIDTH:
                raise ConfigError(
                    f"bandwidth={self.bandwidth!r} must be a positive number "
                    f"or {MEDIAN_BANDWIDTH!r}"
                )
        elif self.bandwidth <= 0.0:
            raise ConfigError(f"bandwidth={self.bandwidth} must be positive")
        if self.horizon < 1:
            raise ConfigError(f"horizon={self.horizon} must be >= 1")
        return self

    def external_items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            key = _EXTERNAL_KEYS.get(f.name, f.name)
            out.append((key, str(getattr(self, f.name))))
        return out


def parse_value(field_name: str, raw: str):
    """Parse one external string value into the field's type."""
    raw = raw.strip()
    kind = {f.name: f.type for f in fields(RunConfig)}[field_name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if field_name == "bandwidth":
            if raw == MEDIAN_BANDWIDTH:
                return raw
            return float(raw)
        return raw
    except ValueError:
        key = _EXTERNAL_KEYS.get(field_name, field_name)
        raise ConfigError(f"config key {key!r}: cannot parse value {raw!r}") from None


def read_config_file(path: str | Path) -> dict[str, object]:
    """Parse a key=value config file into validated field assignments."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        name = _INTERNAL_KEYS.get(key, key)
        if name not in known:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        out[name] = parse_value(name, raw)
    return out


def write_config_file(cfg: RunConfig, path: str | Path) -> None:
    lines = [f"{key}={value}" for key, value in cfg.external_items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_config(path: str | Path | None, overrides: dict[str, object]) -> RunConfig:
    """Defaults, then the config file, then non-None overrides; validates."""
    cfg = RunConfig()
    if path is not None:
        for name, value in read_config_file(path).items():
            setattr(cfg, name, value)
    for name, value in overrides.items():
        if value is not None:
            setattr(cfg, name, value)
    return cfg.validate()
