"""
Configuration package for the jPINN toolkit.

Settings are tiered by profile (``desk`` and ``full``) and resolved from
defaults, the environment (``JPINN_`` prefix) and optional JSON run
configuration files, in that order of increasing precedence.
"""

from .settings import (
    BaseEnsembleSettings,
    BaseLoggingSettings,
    BaseNetworkSettings,
    BaseSettingsProfile,
    BaseSplitSettings,
    BaseTrainingSettings,
    DeskSettings,
    FullSettings,
    RunConfig,
    create_settings,
    get_settings,
    load_run_config,
    reload_settings,
)

# Training configuration as consumed by the trainer
TrainConfig = BaseTrainingSettings

__all__ = [
    "BaseEnsembleSettings",
    "BaseLoggingSettings",
    "BaseNetworkSettings",
    "BaseSettingsProfile",
    "BaseSplitSettings",
    "BaseTrainingSettings",
    "DeskSettings",
    "FullSettings",
    "RunConfig",
    "TrainConfig",
    "create_settings",
    "get_settings",
    "load_run_config",
    "reload_settings",
]
