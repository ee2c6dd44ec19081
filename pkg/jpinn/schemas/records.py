"""
Dataset record schemas.

One row of the dataset CSV is one weekly observation at one site:
``site_id, week, x, y, z, no2_ppb, nox_ppb, split`` followed by the
covariate columns.
"""

import math
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

FIXED_COLUMNS = ["site_id", "week", "x", "y", "z", "no2_ppb", "nox_ppb", "split"]

# Covariate names carry their group as a prefix, e.g. ``met_vx``.
COVARIATE_GROUPS = {
    "met": "meteorology",
    "emi": "emission",
    "ter": "terrain",
    "sea": "season",
    "dst": "distractor",
}


class SplitTag(str, Enum):
    TRAIN = "train"
    REGULAR_TEST = "regular-test"
    SITE_TEST = "site-test"
    PREDICT = "predict"


class SampleRecord(BaseModel):
    """One spatiotemporal observation."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    site_id: str = Field(min_length=1)
    week: int = Field(ge=0)
    x: float
    y: float
    z: float
    no2_ppb: Optional[float] = Field(default=None, ge=0)
    nox_ppb: Optional[float] = Field(default=None, ge=0)
    split: SplitTag = SplitTag.PREDICT
    covariates: Dict[str, float] = Field(default_factory=dict)

    @field_validator("x", "y", "z")
    @classmethod
    def _finite_coordinate(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("coordinate must be finite")
        return value

    @field_validator("no2_ppb", "nox_ppb", mode="before")
    @classmethod
    def _missing_is_none(cls, value: object) -> object:
        if value is None or value == "":
            return None
        if isinstance(value, float) and math.isnan(value):
            return None
        return value

    @field_validator("covariates")
    @classmethod
    def _finite_covariates(cls, value: Dict[str, float]) -> Dict[str, float]:
        bad = [name for name, v in value.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite covariate(s): {', '.join(bad)}")
        return value

    @model_validator(mode="after")
    def _ordered_species(self) -> "SampleRecord":
        if self.no2_ppb is not None and self.nox_ppb is not None and self.no2_ppb > self.nox_ppb:
            raise ValueError(f"ordering violation: no2_ppb {self.no2_ppb} > nox_ppb {self.nox_ppb}")
        return self

    @property
    def observed(self) -> bool:
        return self.no2_ppb is not None or self.nox_ppb is not None


def covariate_group(name: str) -> str:
    """Group of a covariate from its name prefix (``other`` when unknown)."""
    prefix = name.split("_", 1)[0]
    return COVARIATE_GROUPS.get(prefix, "other")


def header(covariates: List[str]) -> List[str]:
    return FIXED_COLUMNS + list(covariates)
