"""Pydantic schemas for dataset records, scenarios, split plans and network topologies."""

from .network import NetworkTopology
from .records import COVARIATE_GROUPS, FIXED_COLUMNS, SampleRecord, SplitTag, covariate_group
from .scenario import GridSpec, SamplingSpec, ScenarioSpec
from .split import SplitPlan

__all__ = [
    "COVARIATE_GROUPS",
    "FIXED_COLUMNS",
    "GridSpec",
    "NetworkTopology",
    "SampleRecord",
    "SamplingSpec",
    "ScenarioSpec",
    "SplitPlan",
    "SplitTag",
    "covariate_group",
]
