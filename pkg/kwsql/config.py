"""Application configuration loaded from YAML or JSON."""

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path.home() / ".kwsql-config.yaml"

MODES = ("llm_only", "danke_only", "llm_dfe", "llm_danke", "llm_dfe_danke", "complete")

PATH_FIELDS = (
    "schema_path",
    "dictionary_path",
    "examples_path",
    "templates_dir",
    "scripted_path",
    "value_source_path",
    "database_seed_path",
    "output_dir",
)
# Inputs only; dictionary_path and examples_path are also written by commands.
MUST_EXIST = ("schema_path", "templates_dir", "scripted_path", "value_source_path", "database_seed_path")


@dataclass
class GenerationSettings:
    """Defaults for the gen-dataset command."""

    table_count_distribution: Dict[int, float] = field(default_factory=lambda: {1: 0.4, 2: 0.4, 3: 0.2})
    examples_target: int = 10
    sample_values: int = 5


@dataclass
class AppConfig:
    """Settings read from the YAML config file, overridable per command."""

    schema_path: Optional[str] = None
    dictionary_path: Optional[str] = None
    examples_path: Optional[str] = None
    templates_dir: Optional[str] = None
    scripted_path: Optional[str] = None
    http_endpoint: Optional[str] = None
    http_model: Optional[str] = None
    database_url: str = "sqlite:///:memory:"
    k: int = 8
    seed: int = 0
    mode: str = "complete"
    concurrency: int = 4
    verbosity: int = 0

    value_source_path: Optional[str] = None
    database_seed_path: Optional[str] = None
    output_dir: str = "kwsql-out"
    strip_prefixes: List[str] = field(default_factory=lambda: ["Maintenance_"])
    row_samples: int = 3
    max_sub_questions: int = 4
    max_retries: int = 2
    timeout: float = 60.0
    max_in_flight: int = 4
    embedding_model: Optional[str] = None
    generation: GenerationSettings = field(default_factory=GenerationSettings)

    @property
    def has_llm_backend(self) -> bool:
        """True when a scripted transcript or an HTTP endpoint is configured."""
        return bool(self.scripted_path or self.http_endpoint)

    def validate(self) -> None:
        """Raise ConfigError on the first out-of-range setting."""
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode '{self.mode}'; expected one of {', '.join(MODES)}")
        for name in ("k", "concurrency", "row_samples", "max_sub_questions", "max_in_flight"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.verbosity < 0 or self.max_retries < 0:
            raise ConfigError("verbosity and max_retries must not be negative")
        if self.scripted_path and self.http_endpoint:
            raise ConfigError("both scripted_path and http_endpoint are set; choose one LLM backend")
        if self.http_endpoint and not self.http_model:
            raise ConfigError("http_endpoint needs http_model")
        for name in MUST_EXIST:
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise ConfigError(f"{name} does not exist: {value}")

    def require(self, name: str) -> Path:
        """A configured path that must exist for the current command."""
        value = getattr(self, name)
        if not value:
            raise ConfigError(f"{name} is not configured")
        path = Path(value)
        if not path.exists():
            raise ConfigError(f"{name} does not exist: {value}")
        return path

    def override(self, **values: Any) -> "AppConfig":
        """Apply command-line overrides; ``None`` leaves a setting unchanged."""
        for key, value in values.items():
            if value is not None:
                setattr(self, key, value)
        self.validate()
        return self


def _coerce(name: str, value: Any, default: Any) -> Any:
    if value is None or default is None:
        return value
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    return value


def _apply(target: Any, values: Dict[str, Any], section: str = "") -> None:
    known = {f.name for f in fields(target)}
    unknown = sorted(set(values) - known)
    if unknown:
        where = f" in {section}" if section else ""
        raise ConfigError(f"unknown config keys{where}: {', '.join(unknown)}")
    for key, value in values.items():
        setattr(target, key, _coerce(key, value, getattr(target, key)))


def config_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None) -> AppConfig:
    """Build a validated config; relative paths resolve against ``base_dir``."""
    config = AppConfig()
    data = dict(data)
    generation = data.pop("generation", None) or {}
    if not isinstance(generation, dict):
        raise ConfigError("generation must be a mapping")
    _apply(config, data)
    _apply(config.generation, generation, "generation")
    config.generation.table_count_distribution = {
        int(n): float(p) for n, p in config.generation.table_count_distribution.items()
    }
    if isinstance(config.strip_prefixes, str):
        config.strip_prefixes = [config.strip_prefixes]

    if base_dir is not None:
        for name in PATH_FIELDS:
            value = getattr(config, name)
            if value and not Path(value).expanduser().is_absolute():
                setattr(config, name, str(base_dir / value))
            elif value:
                setattr(config, name, str(Path(value).expanduser()))
    config.validate()
    return config


def load_config(path: Optional[Union[str, Path]] = None) -> AppConfig:
    """Load ``path`` or the default config file; a missing default file means all defaults."""
    explicit = path is not None
    config_path = Path(path) if explicit else DEFAULT_CONFIG_PATH
    if not config_path.exists():
        if explicit:
            raise ConfigError(f"config file not found: {config_path}")
        return AppConfig()
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot load config from {config_path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config file {config_path} must hold a mapping")
    logger.debug("Loaded config from %s", config_path)
    return config_from_dict(data, config_path.resolve().parent)
