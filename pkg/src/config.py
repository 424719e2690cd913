"""
Configuration loader for the ustar engine.
Reads and validates a YAML configuration file; flags and USTAR_SEED override it.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import yaml

from .errors import ConfigError

logger = logging.getLogger("ustar")

SEED_ENV_VAR = "USTAR_SEED"


@dataclass
class GridConfig:
    # [lat_min, lat_max, lon_min, lon_max]; empty means "derive from data"
    bbox: list = field(default_factory=list)
    cell_m: float = 300.0
    tz_offset_min: int = 0
    time_bins: int = 24
    bbox_from_data: bool = False


@dataclass
class IngestConfig:
    format: str = "jsonl"
    min_freq: int = 100
    # "offline" = two passes over the file, "stream" = running counts
    mode: str = "offline"
    step: str = "1h"
    extra_stopwords: list = field(default_factory=list)


@dataclass
class TrainConfig:
    k: int = 300
    eta: float = 0.05
    epochs: int = 50
    neg_k: int = 5
    tau: float = 1.0
    c_u: float = 0.1
    seed: int = 42
    mode: str = "full"            # full | semi | base
    sampling: str = "informative"  # informative | decay
    neg_dist: str = "uniform"     # uniform | unigram75
    geo_cache: str = "none"       # none | per-step
    cache_z: bool = False

    def validate(self) -> None:
        for name in ("k", "eta", "epochs", "neg_k", "tau", "c_u"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"training.{name} must be positive (got {getattr(self, name)!r})")
        _check_choice("training.mode", self.mode, ("full", "semi", "base"))
        _check_choice("training.sampling", self.sampling, ("informative", "decay"))
        _check_choice("training.neg_dist", self.neg_dist, ("uniform", "unigram75"))
        _check_choice("training.geo_cache", self.geo_cache, ("none", "per-step"))


@dataclass
class EvalConfig:
    M: int = 10
    windows: int = 20
    g: float = 0.5
    seed: int = 42
    # explicit window step indices; overrides random window selection
    windows_at: list = field(default_factory=list)
    baselines: list = field(default_factory=list)
    tau_grid: list = field(default_factory=list)
    g_grid: list = field(default_factory=list)

    def validate(self) -> None:
        if self.M < 1:
            raise ConfigError(f"evaluation.M must be >= 1 (got {self.M})")
        if not 0.0 <= self.g <= 1.0:
            raise ConfigError(f"evaluation.g must lie in [0, 1] (got {self.g})")
        if self.windows < 1 and not self.windows_at:
            raise ConfigError("evaluation.windows must be >= 1")
        for name in self.baselines:
            _check_choice("evaluation.baselines", name, ("tfidf", "tfidf-user"))


@dataclass
class AnalysisConfig:
    n: int = 10
    users: int = 5000
    min_tweets: int = 5
    h: str = "1h"
    pairs: int = 100_000
    window: str = "30d"
    meters: bool = False
    seed: int = 42


@dataclass
class RunConfig:
    log_file: str = ""
    snapshot_every: int = 1


@dataclass
class AppConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        self.training.validate()
        self.evaluation.validate()
        if self.grid.cell_m <= 0:
            raise ConfigError("grid.cell_m must be positive")
        if self.grid.bbox and len(self.grid.bbox) != 4:
            raise ConfigError("grid.bbox must be [lat_min, lat_max, lon_min, lon_max]")
        _check_choice("ingest.format", self.ingest.format, ("jsonl", "csv"))
        _check_choice("ingest.mode", self.ingest.mode, ("offline", "stream"))

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS = {
    "grid": GridConfig,
    "ingest": IngestConfig,
    "training": TrainConfig,
    "evaluation": EvalConfig,
    "analysis": AnalysisConfig,
    "run": RunConfig,
}


def _check_choice(name: str, value: Any, choices: tuple) -> None:
    if value not in choices:
        raise ConfigError(f"{name} must be one of {', '.join(choices)} (got {value!r})")


def _build_section(name: str, raw: Optional[Mapping[str, Any]]) -> Any:
    cls = _SECTIONS[name]
    raw = raw or {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"Section '{name}' must be a mapping.")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"Unknown key(s) in section '{name}': {', '.join(unknown)}")
    section = cls()
    for key, value in raw.items():
        setattr(section, key, _coerce(getattr(section, key), value, f"{name}.{key}"))
    return section


def _coerce(default: Any, value: Any, name: str) -> Any:
    """Cast a YAML/flag value to the type of the dataclass default."""
    if value is None:
        return default
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                return [v.strip() for v in value.split(",") if v.strip()]
            return list(value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: cannot use {value!r} ({e})") from e
    return value


def load_config(config_path: Optional[str] = None, required: bool = False) -> AppConfig:
    """Load and validate configuration from a YAML file."""
    if not config_path or not os.path.exists(config_path):
        if required or config_path:
            raise ConfigError(f"Configuration file not found: {config_path}")
        logger.debug("No configuration file, using defaults")
        return AppConfig()

    with open(config_path, "r", encoding="utf-8") as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {config_path}: {e}") from e

    if not raw:
        return AppConfig()
    if not isinstance(raw, Mapping):
        raise ConfigError("The configuration file must contain a mapping of sections.")

    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown section(s): {', '.join(unknown)}")

    config = AppConfig(**{name: _build_section(name, raw.get(name)) for name in _SECTIONS})
    config.validate()
    return config


def apply_seed(config: AppConfig, seed: int) -> None:
    config.training.seed = seed
    config.evaluation.seed = seed
    config.analysis.seed = seed


def apply_overrides(config: AppConfig, overrides: Mapping[str, Any]) -> AppConfig:
    """
    Apply "section.key" → value overrides; None values are ignored.
    The pseudo-key "seed" sets every section's seed.
    """
    for dotted, value in overrides.items():
        if value is None:
            continue
        if dotted == "seed":
            apply_seed(config, int(value))
            continue
        section_name, _, key = dotted.partition(".")
        if section_name not in _SECTIONS:
            raise ConfigError(f"Unknown override section: {dotted}")
        section = getattr(config, section_name)
        if not hasattr(section, key):
            raise ConfigError(f"Unknown override key: {dotted}")
        setattr(section, key, _coerce(getattr(section, key), value, dotted))
    config.validate()
    return config


def resolve_config(
    config_path: Optional[str],
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
    required: bool = False,
) -> AppConfig:
    """Defaults < config file < USTAR_SEED < command-line flags."""
    config = load_config(config_path, required=required)
    environ = os.environ if environ is None else environ
    env_seed = environ.get(SEED_ENV_VAR)
    if env_seed not in (None, ""):
        try:
            apply_seed(config, int(env_seed))
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer (got {env_seed!r})") from e
    if overrides:
        apply_overrides(config, overrides)
    return config
