"""
Configuration settings management for the jPINN toolkit.

This module provides centralized configuration using pydantic-settings for
type validation and environment variable handling, with tiered profiles:
``desk`` (small topologies that train in minutes on a laptop CPU) and
``full`` (full-size topology and hyperparameters).

Environment variables use the ``JPINN_`` prefix and ``__`` for nesting,
e.g. ``JPINN_TRAINING__EPOCHS=50`` or ``JPINN_LOGGING__LOG_LEVEL=DEBUG``.
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type

from pydantic import Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from jpinn.exceptions import ConfigurationError

FULL_ESTIMATION_WIDTHS = [512, 320, 256, 128, 96, 64, 32, 16]
FULL_PARAMETER_WIDTHS = [1024, 512, 320, 256, 128, 96, 64, 32, 16, 8]

ACTIVATIONS = ("swish", "elu", "tanh", "sigmoid", "relu", "linear")


class BaseNetworkSettings(BaseSettings):
    """Base network topology settings."""

    model_config = SettingsConfigDict(env_prefix="JPINN_NETWORK_", extra="forbid")

    estimation_widths: List[int] = Field(
        default=[64, 32, 16],
        description="Encoder widths of the estimation network (decoder mirrors them)",
    )
    parameter_widths: List[int] = Field(
        default=[128, 64, 32, 16],
        description="Encoder widths of the parameter network (decoder mirrors them)",
    )
    full_widths: bool = Field(
        default=False,
        description="Use the full-size widths regardless of the lists above",
    )
    estimation_encoder_activation: str = Field(default="swish", description="Estimation net encoder activation")
    estimation_decoder_activation: str = Field(default="elu", description="Estimation net decoder activation")
    parameter_activation: str = Field(default="swish", description="Parameter net hidden activation")
    attention: bool = Field(default=True, description="Enable the feature attention gate")
    normalization: bool = Field(default=True, description="Enable weight normalization")

    @field_validator("estimation_widths", "parameter_widths")
    @classmethod
    def _positive_widths(cls, value: List[int]) -> List[int]:
        if not value or any(w < 1 for w in value):
            raise ValueError("widths must be a non-empty list of positive integers")
        return value

    @field_validator(
        "estimation_encoder_activation", "estimation_decoder_activation", "parameter_activation"
    )
    @classmethod
    def _known_activation(cls, value: str) -> str:
        if value not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{value}', expected one of {ACTIVATIONS}")
        return value

    def resolved_estimation_widths(self) -> List[int]:
        return list(FULL_ESTIMATION_WIDTHS if self.full_widths else self.estimation_widths)

    def resolved_parameter_widths(self) -> List[int]:
        return list(FULL_PARAMETER_WIDTHS if self.full_widths else self.parameter_widths)


class DeskNetworkSettings(BaseNetworkSettings):
    """Desk-scale topologies."""


class FullNetworkSettings(BaseNetworkSettings):
    """Full-size topologies."""

    full_widths: bool = True


class BaseTrainingSettings(BaseSettings):
    """
    Base training configuration (mini-batch Adam over the joint loss).

    ``lambdas`` holds the seven residual weights in order e1..e7.
    """

    model_config = SettingsConfigDict(env_prefix="JPINN_TRAINING_", extra="forbid")

    batch_size: int = Field(default=1666, ge=1, description="Mini-batch size of the training partition")
    epochs: int = Field(default=160, ge=1, description="Number of training epochs")
    learning_rate: float = Field(default=0.01, gt=0, description="Adam learning rate")
    beta1: float = Field(default=0.9, ge=0, lt=1, description="Adam first-moment decay")
    beta2: float = Field(default=0.999, ge=0, lt=1, description="Adam second-moment decay")
    literal_beta1: bool = Field(
        default=False,
        description="Use the literally reported beta1 of 0.09 instead of beta1",
    )
    epsilon: float = Field(default=1e-3, gt=0, description="Adam denominator epsilon")
    clip_norm: float = Field(default=1.0, gt=0, description="Global gradient norm clip")
    lambdas: List[float] = Field(
        default=[1.0] * 7,
        description="Weights lambda_1..lambda_7 of the residual terms e1..e7",
    )
    physics_sample_policy: Literal["all-samples", "train+regular-only"] = Field(
        default="all-samples",
        description="Which partitions feed the physics residuals e1-e5",
    )
    log_floor_ppb: float = Field(default=0.01, gt=0, description="Floor delta of log(C + delta)")
    threshold_factor: float = Field(
        default=1.2, gt=0, description="Thresholds are log(factor * max observed training concentration)"
    )
    use_elevation: bool = Field(default=True, description="Keep the z-terms of the PDE residual")
    diagnose_inactive_terms: bool = Field(
        default=True,
        description="Evaluate zero-weight PDE terms for the training log even though they do not train",
    )
    eval_chunk: int = Field(default=2048, ge=1, description="Rows per chunk in prediction passes")

    @field_validator("lambdas")
    @classmethod
    def _seven_nonnegative(cls, value: List[float]) -> List[float]:
        if len(value) != 7 or any(v < 0 for v in value):
            raise ValueError("lambdas must hold exactly 7 nonnegative weights")
        return value

    @property
    def effective_beta1(self) -> float:
        """Beta1 actually used by the optimizer."""
        return 0.09 if self.literal_beta1 else self.beta1


class DeskTrainingSettings(BaseTrainingSettings):
    """Desk-scale training defaults."""

    batch_size: int = Field(default=256, ge=1)
    epochs: int = Field(default=200, ge=1)


class FullTrainingSettings(BaseTrainingSettings):
    """Full-size training hyperparameters."""


class BaseSplitSettings(BaseSettings):
    """Split protocol settings."""

    model_config = SettingsConfigDict(env_prefix="JPINN_SPLIT_", extra="forbid")

    site_train_fraction: float = Field(default=0.632, gt=0, lt=1, description="Share of sites used for training")
    sample_train_fraction: float = Field(
        default=0.78, gt=0, le=1, description="Share of samples at training sites tagged train"
    )
    oversample_tails: float = Field(default=0.2, ge=0, description="Extra training mass drawn from tail deciles")
    region_tiles: int = Field(default=4, ge=1, description="Region buckets per axis (tiles x tiles)")


class DeskSplitSettings(BaseSplitSettings):
    """Desk-scale split settings."""


class FullSplitSettings(BaseSplitSettings):
    """Full-size split settings."""


class BaseEnsembleSettings(BaseSettings):
    """Bootstrap ensemble and interval settings."""

    model_config = SettingsConfigDict(env_prefix="JPINN_ENSEMBLE_", extra="forbid")

    members: int = Field(default=150, ge=2, description="Number of bootstrap members B")
    alpha: float = Field(default=0.05, gt=0, lt=1, description="Interval significance level")
    levels: int = Field(default=8, ge=1, description="Predicted-concentration levels for error pools")
    renormalize_weights: bool = Field(
        default=False, description="Rescale the 0.632+ weights so that they sum to one"
    )
    max_pool_size: int = Field(default=200_000, ge=100, description="Cap on samples per level error pool")
    jobs: int = Field(default=1, ge=1, description="Worker threads for bootstrap members")


class DeskEnsembleSettings(BaseEnsembleSettings):
    """Desk-scale ensemble settings."""

    members: int = Field(default=25, ge=2)


class FullEnsembleSettings(BaseEnsembleSettings):
    """Full-size ensemble settings."""


class BaseLoggingSettings(BaseSettings):
    """Base logging configuration settings."""

    model_config = SettingsConfigDict(env_prefix="JPINN_LOGGING_", extra="forbid")

    log_level: str = Field(default="INFO", description="Log level (DEBUG, INFO, WARNING, ERROR)")
    log_format: str = Field(default="text", description="Log format (json or text)")
    log_file: Optional[str] = Field(default=None, description="Optional JSON log file")
    log_max_size_mb: int = Field(default=100, description="Log file size before rotation")
    log_backup_count: int = Field(default=5, description="Rotated log files to keep")


class DeskLoggingSettings(BaseLoggingSettings):
    """Interactive logging."""


class FullLoggingSettings(BaseLoggingSettings):
    """Long unattended runs log JSON."""

    log_format: str = "json"


class BaseSettingsProfile(BaseSettings):
    """
    Root settings object, also used as the file-based run configuration.

    Unknown keys are rejected. ``scenario`` optionally points at a
    simulation scenario file resolved relative to the config file.
    """

    model_config = SettingsConfigDict(
        env_prefix="JPINN_",
        env_file=".env",
        env_file_encoding="utf-8",
        env_nested_delimiter="__",
        case_sensitive=False,
        extra="forbid",
    )

    profile: str = Field(default="desk", description="Settings profile name")
    seed: int = Field(default=0, description="Master seed for every stochastic step")
    scenario: Optional[str] = Field(default=None, description="Scenario file or bundled scenario name")
    network: BaseNetworkSettings = Field(default_factory=BaseNetworkSettings)
    training: BaseTrainingSettings = Field(default_factory=BaseTrainingSettings)
    split: BaseSplitSettings = Field(default_factory=BaseSplitSettings)
    ensemble: BaseEnsembleSettings = Field(default_factory=BaseEnsembleSettings)
    logging: BaseLoggingSettings = Field(default_factory=BaseLoggingSettings)

    def dump(self, out_dir: Path) -> Path:
        """Write the resolved configuration next to run outputs."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "resolved_config.json"
        path.write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return path


class DeskSettings(BaseSettingsProfile):
    """Desk-scale profile: minutes per model on a laptop CPU."""

    profile: str = "desk"
    network: DeskNetworkSettings = Field(default_factory=DeskNetworkSettings)
    training: DeskTrainingSettings = Field(default_factory=DeskTrainingSettings)
    split: DeskSplitSettings = Field(default_factory=DeskSplitSettings)
    ensemble: DeskEnsembleSettings = Field(default_factory=DeskEnsembleSettings)
    logging: DeskLoggingSettings = Field(default_factory=DeskLoggingSettings)


class FullSettings(BaseSettingsProfile):
    """Full-scale profile."""

    profile: str = "full"
    network: FullNetworkSettings = Field(default_factory=FullNetworkSettings)
    training: FullTrainingSettings = Field(default_factory=FullTrainingSettings)
    split: FullSplitSettings = Field(default_factory=FullSplitSettings)
    ensemble: FullEnsembleSettings = Field(default_factory=FullEnsembleSettings)
    logging: FullLoggingSettings = Field(default_factory=FullLoggingSettings)


PROFILES: Dict[str, Type[BaseSettingsProfile]] = {"desk": DeskSettings, "full": FullSettings}

# Public alias: a run configuration is a fully resolved settings profile.
RunConfig = BaseSettingsProfile


def _profile_class(name: Optional[str] = None) -> Type[BaseSettingsProfile]:
    profile = (name or os.getenv("JPINN_PROFILE", "desk")).lower()
    if profile not in PROFILES:
        raise ConfigurationError(f"Unknown settings profile '{profile}'", details={"profiles": sorted(PROFILES)})
    return PROFILES[profile]


def create_settings(profile: Optional[str] = None, **overrides: Any) -> BaseSettingsProfile:
    """Create the settings instance for the selected profile."""
    try:
        return _profile_class(profile)(**overrides)
    except ValidationError as e:
        raise ConfigurationError("Invalid settings", details={"errors": _errors(e)}) from e


def load_run_config(path: Optional[Path] = None, **overrides: Any) -> BaseSettingsProfile:
    """
    Load a run configuration from a JSON file on top of the active profile.

    Args:
        path: JSON config file; ``None`` yields the profile defaults.
        **overrides: Top-level keys applied after the file (e.g. ``seed``).

    Raises:
        ConfigurationError: On unreadable files, unknown keys or invalid values.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"Cannot read run config {path}", details={"error": str(e)}) from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"Run config {path} must be a JSON object")
        scenario = data.get("scenario")
        if scenario and (path.parent / scenario).exists():
            data["scenario"] = str(path.parent / scenario)
    data.update({k: v for k, v in overrides.items() if v is not None})
    profile = data.pop("profile", None)
    return create_settings(profile, **data)


def _errors(error: ValidationError) -> List[Dict[str, Any]]:
    return [{"loc": ".".join(str(p) for p in err["loc"]), "msg": err["msg"]} for err in error.errors()]


# Global settings instance
settings: Optional[BaseSettingsProfile] = None


def get_settings() -> BaseSettingsProfile:
    """Get the global settings instance."""
    global settings
    if settings is None:
        settings = create_settings()
    return settings


def reload_settings() -> BaseSettingsProfile:
    """Reload settings from environment variables."""
    global settings
    settings = create_settings()
    return settings
