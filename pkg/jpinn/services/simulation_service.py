"""
Simulation service.

Finite-volume advection-diffusion of two species on a regular 2-D grid,
used to manufacture datasets with known transport fields. Faces carry the
average velocity and diffusivity of their two cells; advection is first
order upwind, diffusion second order central, sources and first-order
removal are integrated explicitly.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from jpinn.exceptions import CFLViolationError, ConfigurationError
from jpinn.schemas.records import SampleRecord, SplitTag
from jpinn.schemas.scenario import GridSpec, SamplingSpec, ScenarioSpec, evaluate_components
from jpinn.services.dataset_service import Dataset, from_records
from jpinn.utils.logging import get_logger, log_function_call
from jpinn.utils.random import make_rng

logger = get_logger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"
WEEKS_PER_YEAR = 52.0

ADVECTION_LIMIT = 1.0
DIFFUSION_LIMIT = 0.5
POSITIVITY_LIMIT = 1.0


@dataclass
class FieldSet:
    """Transport fields on the grid, each ``(nx, ny)``."""

    v_x: np.ndarray
    v_y: np.ndarray
    p: np.ndarray
    rho_no2: np.ndarray
    rho_nox: np.ndarray
    z: np.ndarray
    seasonal_amplitude: float = 0.0
    loss_rate: float = 0.0

    def __post_init__(self) -> None:
        shape = self.v_x.shape
        for name in ("v_y", "p", "rho_no2", "rho_nox", "z"):
            value = getattr(self, name)
            if value.shape != shape:
                raise ConfigurationError(f"Field {name} has shape {value.shape}, expected {shape}")
            if not np.all(np.isfinite(value)):
                raise ConfigurationError(f"Field {name} is not finite everywhere")
        if np.any(self.p < 0):
            raise ConfigurationError("Diffusion field must be nonnegative")
        if np.any(self.rho_no2 < 0) or np.any(self.rho_nox < self.rho_no2):
            raise ConfigurationError("Sources must satisfy 0 <= rho_no2 <= rho_nox")

    def season(self, t: float) -> float:
        return 1.0 + self.seasonal_amplitude * math.sin(2.0 * math.pi * t / WEEKS_PER_YEAR)

    def sources(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        s = self.season(t)
        return self.rho_no2 * s, self.rho_nox * s


@dataclass
class SpeciesState:
    """Concentration grids in ppb at time ``time`` (weeks)."""

    no2: np.ndarray
    nox: np.ndarray
    time: float = 0.0


def derived_wind(
    u2: np.ndarray, v2: np.ndarray, u10: np.ndarray, v10: np.ndarray, u50: np.ndarray, v50: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vertical stagnation and mixing indicators from winds at 2, 10 and 50 m.

    Returns:
        ``(w_stag, w_mix)`` with ``w_stag = |w50| - |w10|`` and
        ``w_mix = |w10| - |w2|``.
    """
    s2, s10, s50 = np.hypot(u2, v2), np.hypot(u10, v10), np.hypot(u50, v50)
    return s50 - s10, s10 - s2


# -------------------------------------------------------------- stability
def stability_ratios(grid: GridSpec, fields: FieldSet) -> Dict[str, Tuple[float, float]]:
    """Each stability ratio of the explicit scheme with its limit."""
    vmax = float(max(np.max(np.abs(fields.v_x)), np.max(np.abs(fields.v_y))))
    pmax = float(np.max(fields.p))
    h = min(grid.dx, grid.dy)
    outflow = (
        np.abs(fields.v_x) / grid.dx
        + np.abs(fields.v_y) / grid.dy
        + 2.0 * fields.p * (1.0 / grid.dx**2 + 1.0 / grid.dy**2)
        + fields.loss_rate
    )
    return {
        "advection": (vmax * grid.dt / h, ADVECTION_LIMIT),
        "diffusion": (pmax * grid.dt / h**2, DIFFUSION_LIMIT),
        "positivity": (float(np.max(outflow)) * grid.dt, POSITIVITY_LIMIT),
    }


def check_stability(grid: GridSpec, fields: FieldSet) -> None:
    for name, (ratio, limit) in stability_ratios(grid, fields).items():
        if ratio > limit:
            raise CFLViolationError(
                f"{name} ratio {ratio:.6g} exceeds {limit:g}; reduce dt",
                ratio_name=name,
                ratio=ratio,
                limit=limit,
            )


# --------------------------------------------------------------- stepping
def _face_flux(c: np.ndarray, v: np.ndarray, p: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    """Divergence of the advective-diffusive flux along one axis."""
    if periodic:
        c_next = np.roll(c, -1, axis=axis)
        v_face = 0.5 * (v + np.roll(v, -1, axis=axis))
        p_face = 0.5 * (p + np.roll(p, -1, axis=axis))
        flux = v_face * np.where(v_face > 0, c, c_next) - p_face * (c_next - c) / h
        return (flux - np.roll(flux, 1, axis=axis)) / h

    lo = [slice(None)] * c.ndim
    hi = [slice(None)] * c.ndim
    lo[axis], hi[axis] = slice(None, -1), slice(1, None)
    lo_t, hi_t = tuple(lo), tuple(hi)
    v_face = 0.5 * (v[lo_t] + v[hi_t])
    p_face = 0.5 * (p[lo_t] + p[hi_t])
    inner = v_face * np.where(v_face > 0, c[lo_t], c[hi_t]) - p_face * (c[hi_t] - c[lo_t]) / h
    pad = [(0, 0)] * c.ndim
    pad[axis] = (1, 1)
    flux = np.pad(inner, pad)  # closed outer faces
    return (flux[hi_t] - flux[lo_t]) / h


def _step(c: np.ndarray, rho: np.ndarray, grid: GridSpec, fields: FieldSet) -> np.ndarray:
    periodic = grid.boundary == "periodic"
    div = _face_flux(c, fields.v_x, fields.p, grid.dx, 0, periodic) + _face_flux(
        c, fields.v_y, fields.p, grid.dy, 1, periodic
    )
    return c - grid.dt * div + grid.dt * (rho - fields.loss_rate * c)


def simulate(
    grid: GridSpec,
    fields: FieldSet,
    initial: SpeciesState,
    steps: int,
    record_every: int = 1,
) -> List[SpeciesState]:
    """
    Integrate both species for ``steps`` time steps.

    Args:
        grid: Grid geometry, time step and boundary type.
        fields: Transport fields and sources.
        initial: Starting concentrations (``time`` is the start time).
        steps: Number of explicit steps.
        record_every: Keep every n-th state.

    Returns:
        Recorded states, starting with the initial one.

    Raises:
        CFLViolationError: The grid violates a stability bound.
    """
    if fields.v_x.shape != (grid.nx, grid.ny):
        raise ConfigurationError("Field shape does not match the grid")
    if record_every < 1:
        raise ConfigurationError("record_every must be positive")
    check_stability(grid, fields)

    no2, nox = initial.no2.astype(np.float64), initial.nox.astype(np.float64)
    series = [SpeciesState(no2.copy(), nox.copy(), initial.time)]
    for k in range(1, steps + 1):
        t = initial.time + (k - 1) * grid.dt
        rho_no2, rho_nox = fields.sources(t)
        no2 = _step(no2, rho_no2, grid, fields)
        nox = _step(nox, rho_nox, grid, fields)
        if k % record_every == 0:
            series.append(SpeciesState(no2.copy(), nox.copy(), initial.time + k * grid.dt))
    return series


# -------------------------------------------------------------- scenarios
def load_scenario(name_or_path: Union[str, Path]) -> ScenarioSpec:
    """Load a scenario file, or a bundled scenario by name."""
    path = Path(name_or_path)
    if not path.exists():
        bundled = SCENARIO_DIR / f"{name_or_path}.json"
        if not bundled.exists():
            available = sorted(p.stem for p in SCENARIO_DIR.glob("*.json"))
            raise ConfigurationError(f"Unknown scenario '{name_or_path}'", details={"bundled": available})
        path = bundled
    try:
        return ScenarioSpec.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot read scenario {path}", details={"error": str(e)}) from e
    except ValidationError as e:
        errors = [{"loc": ".".join(str(p) for p in err["loc"]), "msg": err["msg"]} for err in e.errors()]
        raise ConfigurationError(f"Invalid scenario {path}", details={"errors": errors}) from e


def build_fields(spec: ScenarioSpec) -> FieldSet:
    g = spec.grid
    x, y = np.meshgrid((np.arange(g.nx) + 0.5) * g.dx, (np.arange(g.ny) + 0.5) * g.dy, indexing="ij")
    rho_no2 = evaluate_components(spec.source_no2, x, y)
    extra = evaluate_components(spec.source_nox_extra, x, y)
    if np.any(extra < 0):
        raise ConfigurationError("source_nox_extra must be nonnegative everywhere")
    return FieldSet(
        v_x=evaluate_components(spec.velocity_x, x, y),
        v_y=evaluate_components(spec.velocity_y, x, y),
        p=evaluate_components(spec.diffusion, x, y),
        rho_no2=rho_no2,
        rho_nox=rho_no2 + extra,
        z=evaluate_components(spec.terrain, x, y),
        seasonal_amplitude=spec.seasonal_amplitude,
        loss_rate=spec.loss_rate,
    )


def weekly_means(series: List[SpeciesState], per_week: int) -> List[SpeciesState]:
    """
    Average the states after the initial one in blocks of ``per_week`` steps.

    Each mean carries the end time of its week.
    """
    steps = series[1:]
    if per_week < 1 or len(steps) % per_week:
        raise ConfigurationError(
            "Series does not split into whole weeks", details={"steps": len(steps), "per_week": per_week}
        )
    weeks = []
    for start in range(0, len(steps), per_week):
        block = steps[start : start + per_week]
        weeks.append(
            SpeciesState(
                np.mean([s.no2 for s in block], axis=0),
                np.mean([s.nox for s in block], axis=0),
                block[-1].time,
            )
        )
    return weeks


def run_scenario(spec: ScenarioSpec) -> Tuple[List[SpeciesState], FieldSet]:
    """Spin up, then return the mean state of each of the next ``n_weeks`` weeks."""
    grid = spec.grid
    per_week = grid.steps_per_week
    if abs(per_week * grid.dt - 1.0) > 1e-9:
        raise ConfigurationError("dt must divide one week into a whole number of steps", details={"dt": grid.dt})
    fields = build_fields(spec)
    shape = (grid.nx, grid.ny)
    initial = SpeciesState(np.full(shape, spec.initial_no2), np.full(shape, spec.initial_nox))
    total = (spec.spinup_weeks + spec.n_weeks) * per_week
    logger.info("simulation_started", scenario=spec.name, steps=total, grid=list(shape))
    series = simulate(grid, fields, initial, steps=total)
    weekly = weekly_means(series, per_week)[spec.spinup_weeks :]
    return weekly, fields


def _proxy(value: float, spread: float, sd: float, rng: np.random.Generator) -> float:
    return float(value + sd * spread * rng.standard_normal())


def sample_sites(
    series: List[SpeciesState],
    fields: FieldSet,
    grid: GridSpec,
    sampling: SamplingSpec,
    seed: int,
    n_weeks: Optional[int] = None,
) -> Dataset:
    """
    Weekly records at randomly placed, distinct monitoring cells.

    Monitored sites get noisy observations; prediction-only sites get none.
    """
    n_weeks = len(series) if n_weeks is None else n_weeks
    if n_weeks > len(series):
        raise ConfigurationError("n_weeks exceeds the simulated series")
    rng = make_rng(seed, 11)
    n_total = sampling.n_sites + sampling.n_predict_sites
    if n_total > grid.nx * grid.ny:
        raise ConfigurationError("More sites than grid cells")
    cells = rng.choice(grid.nx * grid.ny, size=n_total, replace=False)

    spreads = {name: float(np.std(getattr(fields, name))) or 1.0 for name in ("v_x", "v_y", "p", "rho_nox", "z")}
    covariates = [
        "met_vx", "met_vy", "met_diff", "met_wstag", "met_wmix", "emi_source", "ter_elev", "sea_sin", "sea_cos"
    ]
    covariates += [f"dst_{k + 1}" for k in range(sampling.n_distractors)]
    sd = sampling.proxy_noise_sd

    records: List[SampleRecord] = []
    for k, cell in enumerate(cells):
        i, j = divmod(int(cell), grid.ny)
        monitored = k < sampling.n_sites
        site_id = f"S{k:04d}" if monitored else f"P{k - sampling.n_sites:04d}"
        for w in range(n_weeks):
            state = series[w]
            vx, vy = float(fields.v_x[i, j]), float(fields.v_y[i, j])
            u10, v10 = sampling.wind_scale * vx, sampling.wind_scale * vy
            f2 = 0.55 + 0.1 * rng.standard_normal()
            f50 = 1.5 + 0.2 * rng.standard_normal()
            w_stag, w_mix = derived_wind(f2 * u10, f2 * v10, u10, v10, f50 * u10, f50 * v10)
            phase = 2.0 * math.pi * state.time / WEEKS_PER_YEAR
            values = {
                "met_vx": _proxy(vx, spreads["v_x"], sd, rng),
                "met_vy": _proxy(vy, spreads["v_y"], sd, rng),
                "met_diff": _proxy(float(fields.p[i, j]), spreads["p"], sd, rng),
                "met_wstag": float(w_stag),
                "met_wmix": float(w_mix),
                "emi_source": _proxy(float(fields.sources(state.time)[1][i, j]), spreads["rho_nox"], sd, rng),
                "ter_elev": _proxy(float(fields.z[i, j]), spreads["z"], sd, rng),
                "sea_sin": math.sin(phase),
                "sea_cos": math.cos(phase),
            }
            for name in covariates[9:]:
                values[name] = float(rng.standard_normal())

            no2 = nox = None
            if monitored:
                eps = rng.standard_normal(2)
                nox = max(0.0, float(state.nox[i, j]) * math.exp(sampling.noise_sd * eps[1]))
                no2 = min(max(0.0, float(state.no2[i, j]) * math.exp(sampling.noise_sd * eps[0])), nox)
            records.append(
                SampleRecord(
                    site_id=site_id,
                    week=w,
                    x=(i + 0.5) * grid.dx,
                    y=(j + 0.5) * grid.dy,
                    z=float(fields.z[i, j]),
                    no2_ppb=no2,
                    nox_ppb=nox,
                    split=SplitTag.TRAIN if monitored else SplitTag.PREDICT,
                    covariates=values,
                )
            )
    return from_records(records, covariates)


@log_function_call
def simulate_dataset(spec: ScenarioSpec, seed: int) -> Dataset:
    series, fields = run_scenario(spec)
    dataset = sample_sites(series, fields, spec.grid, spec.sampling, seed, n_weeks=spec.n_weeks)
    logger.info("dataset_simulated", scenario=spec.name, rows=len(dataset), sites=len(dataset.site_ids))
    return dataset
