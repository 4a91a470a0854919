"""Experiment configuration: JSON round-trip with path-aware validation.

Defaults mirror the headline experimental setup (tanh, C_W = 2, C_b = 0,
N = 4, kappa = 2, rho = 0.3, n = 64, eps = 0.05, depth 800, five million
members); runnable desk-scale configs override members/eps/depth.  A config
file fully determines every output byte given the code version.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError
from .simulate import NetworkConfig

_SENTINEL = object()


@dataclass(frozen=True)
class EnsembleSettings:
    members: int = 5_000_000
    master_seed: int = 20260809
    heavy: bool = False
    checkpoints: tuple[int, ...] | None = None
    pair_layers: tuple[int, ...] | None = None
    threads: int | None = None
    backend: str | None = None


@dataclass(frozen=True)
class FlowSettings:
    mode: str = "ladder"
    rk4_dt: float | None = None
    include_wishart: bool = True
    transport: bool = True
    v4_init: str = "wishart"          # wishart | zero
    quadrature_order: int | None = None


@dataclass(frozen=True)
class DiagnosticsSettings:
    checks: tuple[str, ...] = ("sigma", "u1", "rv4", "hierarchy")
    components: tuple[tuple[int, int], ...] = ((0, 0), (0, 1))
    max_hierarchy_order: int = 2


@dataclass(frozen=True)
class IoSettings:
    out_dir: str = "runs/out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    flow: FlowSettings = field(default_factory=FlowSettings)
    diagnostics: DiagnosticsSettings = field(default_factory=DiagnosticsSettings)
    io: IoSettings = field(default_factory=IoSettings)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        errors: list[str] = []
        sections = {
            "network": NetworkConfig,
            "ensemble": EnsembleSettings,
            "flow": FlowSettings,
            "diagnostics": DiagnosticsSettings,
            "io": IoSettings,
        }
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        unknown = set(raw) - set(sections)
        if unknown:
            errors.append(f"unknown top-level keys: {sorted(unknown)}")
        built = {}
        for name, klass in sections.items():
            sub = raw.get(name, {})
            if not isinstance(sub, dict):
                errors.append(f"{name}: must be an object")
                continue
            known = {f.name for f in fields(klass)}
            for key in sub:
                if key not in known:
                    errors.append(f"{name}.{key}: unknown key")
            kwargs = {}
            for f in fields(klass):
                if f.name in sub:
                    kwargs[f.name] = _coerce(sub[f.name])
            try:
                built[name] = klass(**kwargs)
            except (ConfigError, TypeError, ValueError) as exc:
                errors.append(f"{name}: {exc}")
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
        return cls(**built)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
        try:
            return cls.from_dict(raw)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(dumps_canonical(self.to_dict()) + "\n")

    def with_override(self, dotted_key: str, value) -> "ExperimentConfig":
        """Return a copy with ``section.key`` replaced by a parsed value."""
        try:
            section_name, key = dotted_key.split(".", 1)
        except ValueError:
            raise ConfigError(f"override {dotted_key!r} must look like section.key") from None
        section = getattr(self, section_name, _SENTINEL)
        if section is _SENTINEL:
            raise ConfigError(f"unknown config section {section_name!r}")
        if key not in {f.name for f in fields(section)}:
            raise ConfigError(f"unknown config key {dotted_key!r}")
        return replace(self, **{section_name: replace(section, **{key: _coerce(value)})})


def _coerce(value):
    """JSON lists arrive as lists; freeze them so configs stay hashable."""
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    if isinstance(value, str):
        lowered = value.lower()
        if lowered in ("true", "false"):
            return lowered == "true"
        if lowered in ("null", "none"):
            return None
        try:
            return int(value)
        except ValueError:
            pass
        try:
            return float(value)
        except ValueError:
            pass
    return value


def dumps_canonical(obj) -> str:
    """Deterministic JSON: sorted keys, stable float repr, no whitespace drift."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
