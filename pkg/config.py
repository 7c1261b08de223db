"""
Configuration management for the viloc localization pipeline

Handles run settings for:
- Scene simulation (SceneConfig, NoiseConfig)
- Training and fine-tuning (TrainConfig, SelfTrainConfig)
- Baselines (ParticleFilterConfig)
- Experiments (PerturbationSpec, FeatureMask)

Sources, highest precedence first:
    1. keyword arguments (CLI flags)
    2. config file (dotenv syntax, e.g. VILOC_TRAIN__EPOCHS=50)
    3. environment variables (VILOC_SEED and friends)
    4. defaults

Usage:
    from config import RunConfig, get_settings

    cfg = RunConfig(_env_file="run.env", seed=7)
    print(cfg.train.epochs)
"""

import math
from pathlib import Path
from typing import List, Optional, Tuple, Type

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
)

from models import (
    FeatureMask,
    ParticleFilterConfig,
    PerturbationSpec,
    SceneConfig,
    SelfTrainConfig,
    TrainConfig,
)


ENV_PREFIX = "VILOC_"
NESTED_DELIMITER = "__"
SEEDED_SECTIONS = ("scene", "train", "pf", "perturbation")


class RunConfig(BaseSettings):
    """Resolved parameters for one CLI run"""

    # ==================== Global ====================

    seed: int = 0
    """Root of the seeded generator hierarchy"""

    hop: float = Field(1.0 / 3.0, gt=0)
    """Sliding-window hop (seconds)"""

    log_level: str = "INFO"
    """DEBUG shows per-batch training losses"""

    # ==================== Parameter Sets ====================

    scene: SceneConfig = Field(default_factory=SceneConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    pf: ParticleFilterConfig = Field(default_factory=ParticleFilterConfig)
    perturbation: PerturbationSpec = Field(default_factory=PerturbationSpec)
    mask: FeatureMask = Field(default_factory=FeatureMask)
    selftrain: SelfTrainConfig = Field(default_factory=SelfTrainConfig)

    # ==================== Model Configuration ====================

    model_config = SettingsConfigDict(
        env_prefix=ENV_PREFIX,
        env_nested_delimiter=NESTED_DELIMITER,
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    @field_validator("log_level")
    @classmethod
    def check_log_level(cls, value: str) -> str:
        value = value.upper()
        if value not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {value}")
        return value

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        # The config file outranks the environment; environment only
        # overrides defaults.
        return init_settings, dotenv_settings, env_settings

    @model_validator(mode="after")
    def propagate_seed(self) -> "RunConfig":
        """Sub-configs without an explicit seed inherit the root seed"""
        for name in SEEDED_SECTIONS:
            section = getattr(self, name)
            if "seed" not in section.model_fields_set:
                setattr(self, name, section.model_copy(update={"seed": self.seed}))
        return self


# ==================== Snapshot ====================

def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _flatten(prefix: str, model: BaseModel) -> List[str]:
    lines = []
    for name in type(model).model_fields:
        value = getattr(model, name)
        key = f"{prefix}{NESTED_DELIMITER}{name}" if prefix else name
        if isinstance(value, BaseModel):
            lines.extend(_flatten(key, value))
        else:
            lines.append(f"{ENV_PREFIX}{key.upper()}={_format_value(value)}")
    return lines


def snapshot_lines(cfg: RunConfig) -> List[str]:
    """
    Render a resolved config in the config-file syntax

    Floats use repr so RunConfig(_env_file=snapshot) reproduces the run exactly.
    """
    return _flatten("", cfg)


def write_snapshot(cfg: RunConfig, out_dir: Path) -> Path:
    """Write config.env into a run directory"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.env"
    path.write_text("\n".join(snapshot_lines(cfg)) + "\n", encoding="utf-8")
    return path


def load_config(config_file: Optional[Path] = None, **overrides) -> RunConfig:
    """
    Resolve a RunConfig from an optional config file plus CLI overrides

    Raises:
        FileNotFoundError: config file does not exist
        pydantic.ValidationError: a value violates its constraints
    """
    if config_file is not None:
        config_file = Path(config_file)
        if not config_file.exists():
            raise FileNotFoundError(f"Config file not found: {config_file}")
        return RunConfig(_env_file=config_file, **overrides)
    return RunConfig(_env_file=None, **overrides)


# ==================== Global Settings Instance ====================

_settings: Optional[RunConfig] = None


def get_settings() -> RunConfig:
    """
    Get process-wide defaults (singleton pattern)

    Reads the environment once; VILOC_SEED=7 makes 7 the default seed.
    """
    global _settings
    if _settings is None:
        _settings = RunConfig(_env_file=None)
    return _settings


def reload_settings() -> RunConfig:
    """
    Reload settings from the environment (useful for testing)

    Example:
        os.environ['VILOC_SEED'] = '7'
        settings = reload_settings()
    """
    global _settings
    _settings = RunConfig(_env_file=None)
    return _settings
