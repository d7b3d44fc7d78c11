"""Flat ``key = value`` run configuration with strict key checking.

The same schema is written back as ``run.meta`` next to every output, so a
finished run's metadata is itself a valid config that reproduces the run.
Keys prefixed ``info_`` are informational echoes and are accepted but
ignored on input; execution-resource settings (output dir, thread budget)
are deliberately not part of the schema.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from . import features as feats
from .fusion import EstimatorConfig, FusionParams
from .patchmatch import SearchParams


class ConfigError(ValueError):
    """Bad configuration key, value, or combination."""


@dataclass
class RunConfig:
    library: str = ""
    subject: str = ""
    roi: str = ""
    scales: tuple[int, ...] = (3, 5)
    features: tuple[str, ...] = (feats.INTENSITY, feats.GRADIENT_NORM)
    k: int = 10
    iterations: int = 3
    init_window: int = 13
    seed: int = 0
    alpha: float = 2.0
    sigma: float = 2.0
    epsilon: float = 1e-6
    roi_dilate: float = 5.0

    def search_params(self) -> SearchParams:
        try:
            return SearchParams(
                init_window=self.init_window,
                iterations=self.iterations,
                k=self.k,
                seed=self.seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def fusion_params(self) -> FusionParams:
        try:
            return FusionParams(alpha=self.alpha, sigma=self.sigma, epsilon=self.epsilon)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def estimator_config(self) -> EstimatorConfig:
        try:
            return EstimatorConfig(scales=self.scales, features=self.features)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> "RunConfig":
        self.search_params()
        self.fusion_params()
        self.estimator_config()
        if self.roi_dilate < 0:
            raise ConfigError("roi_dilate must be >= 0")
        return self

    def to_text(self, extra: dict | None = None) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {_format(value)}")
        for key, value in (extra or {}).items():
            lines.append(f"info_{key} = {_format(value)}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "library": str,
    "subject": str,
    "roi": str,
    "scales": lambda s: tuple(int(v) for v in s.split(",") if v.strip()),
    "features": lambda s: tuple(v.strip() for v in s.split(",") if v.strip()),
    "k": int,
    "iterations": int,
    "init_window": int,
    "seed": int,
    "alpha": float,
    "sigma": float,
    "epsilon": float,
    "roi_dilate": float,
}


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("info_"):
            continue
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return cfg


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base=base)
