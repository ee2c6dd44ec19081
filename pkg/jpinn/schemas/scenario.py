"""
Simulation scenario schemas.

A scenario describes a 2-D grid, the spatial fields that drive transport
(velocity, diffusivity, sources, terrain), the run length and how
monitoring sites are sampled. Fields are sums of typed components
evaluated at cell centres.
"""

import math
from typing import Annotated, List, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Component(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ConstantComponent(_Component):
    kind: Literal["constant"] = "constant"
    value: float


class GaussianComponent(_Component):
    kind: Literal["gaussian"] = "gaussian"
    amplitude: float
    center: Tuple[float, float]
    width: float = Field(gt=0)


class LinearComponent(_Component):
    kind: Literal["linear"] = "linear"
    gradient: Tuple[float, float]
    offset: float = 0.0


class SinusoidComponent(_Component):
    kind: Literal["sinusoid"] = "sinusoid"
    amplitude: float
    wavelength: Tuple[float, float]
    phase: float = 0.0


Component = Annotated[
    Union[ConstantComponent, GaussianComponent, LinearComponent, SinusoidComponent],
    Field(discriminator="kind"),
]


class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    nx: int = Field(ge=2)
    ny: int = Field(ge=2)
    dx: float = Field(gt=0)
    dy: float = Field(gt=0)
    dt: float = Field(gt=0, description="Time step in weeks")
    boundary: Literal["periodic", "zero-flux"] = "periodic"

    @property
    def steps_per_week(self) -> int:
        steps = 1.0 / self.dt
        return max(1, int(round(steps)))


class SamplingSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_sites: int = Field(ge=1)
    n_predict_sites: int = Field(default=0, ge=0)
    noise_sd: float = Field(default=0.1, ge=0, description="Lognormal observation noise sd")
    proxy_noise_sd: float = Field(default=0.1, ge=0, description="Relative noise on covariate proxies")
    n_distractors: int = Field(default=2, ge=0)
    wind_scale: float = Field(default=1.0, gt=0, description="Metres per second per grid unit per week")


class ScenarioSpec(BaseModel):
    """Complete simulation scenario."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    grid: GridSpec
    spinup_weeks: int = Field(default=10, ge=0)
    n_weeks: int = Field(ge=1)
    velocity_x: List[Component]
    velocity_y: List[Component]
    diffusion: List[Component]
    terrain: List[Component] = Field(default_factory=list)
    source_no2: List[Component]
    source_nox_extra: List[Component]
    seasonal_amplitude: float = Field(default=0.3, ge=0, lt=1)
    loss_rate: float = Field(default=0.0, ge=0, description="First-order removal per week")
    initial_no2: float = Field(default=0.0, ge=0)
    initial_nox: float = Field(default=0.0, ge=0)
    sampling: SamplingSpec

    @model_validator(mode="after")
    def _initial_ordered(self) -> "ScenarioSpec":
        if self.initial_no2 > self.initial_nox:
            raise ValueError("initial_no2 must not exceed initial_nox")
        cells = self.grid.nx * self.grid.ny
        wanted = self.sampling.n_sites + self.sampling.n_predict_sites
        if wanted > cells:
            raise ValueError(f"cannot place {wanted} distinct sites on {cells} cells")
        return self


def evaluate_components(components: List[Component], x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sum of the components at coordinates ``x``, ``y``."""
    value = np.zeros_like(x, dtype=np.float64)
    for c in components:
        if isinstance(c, ConstantComponent):
            value = value + c.value
        elif isinstance(c, GaussianComponent):
            r2 = (x - c.center[0]) ** 2 + (y - c.center[1]) ** 2
            value = value + c.amplitude * np.exp(-0.5 * r2 / c.width**2)
        elif isinstance(c, LinearComponent):
            value = value + c.offset + c.gradient[0] * x + c.gradient[1] * y
        elif isinstance(c, SinusoidComponent):
            kx = 2 * math.pi / c.wavelength[0] if c.wavelength[0] else 0.0
            ky = 2 * math.pi / c.wavelength[1] if c.wavelength[1] else 0.0
            value = value + c.amplitude * np.sin(kx * x + ky * y + c.phase)
    return value

