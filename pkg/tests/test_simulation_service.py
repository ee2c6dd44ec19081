"""
Test suite for the finite-volume simulator and the scenario sampler.
"""

import numpy as np
import pytest

from jpinn.exceptions import CFLViolationError, ConfigurationError
from jpinn.schemas.scenario import GridSpec, ScenarioSpec
from jpinn.services.dataset_service import write_dataset
from jpinn.services.simulation_service import (
    FieldSet,
    SpeciesState,
    check_stability,
    derived_wind,
    load_scenario,
    run_scenario,
    sample_sites,
    simulate,
    simulate_dataset,
    weekly_means,
)


def uniform_fields(nx, ny, v_x=0.0, v_y=0.0, p=0.0, rho_no2=0.0, rho_nox=0.0, loss_rate=0.0) -> FieldSet:
    shape = (nx, ny)
    return FieldSet(
        v_x=np.full(shape, v_x),
        v_y=np.full(shape, v_y),
        p=np.full(shape, p),
        rho_no2=np.full(shape, rho_no2),
        rho_nox=np.full(shape, rho_nox),
        z=np.zeros(shape),
        loss_rate=loss_rate,
    )


def gaussian_blob(nx, ny, center, sigma) -> np.ndarray:
    x, y = np.meshgrid(np.arange(nx) + 0.5, np.arange(ny) + 0.5, indexing="ij")
    return np.exp(-0.5 * ((x - center[0]) ** 2 + (y - center[1]) ** 2) / sigma**2)


def moments(c: np.ndarray):
    x = np.arange(c.shape[0]) + 0.5
    marginal = c.sum(axis=1)
    mass = marginal.sum()
    mean = float((x * marginal).sum() / mass)
    var = float(((x - mean) ** 2 * marginal).sum() / mass)
    return mean, var


def small_scenario(**overrides) -> ScenarioSpec:
    data = {
        "name": "unit",
        "grid": {"nx": 8, "ny": 8, "dx": 1.0, "dy": 1.0, "dt": 0.1},
        "spinup_weeks": 2,
        "n_weeks": 6,
        "velocity_x": [{"kind": "constant", "value": 0.5}],
        "velocity_y": [{"kind": "constant", "value": -0.2}],
        "diffusion": [{"kind": "constant", "value": 0.3}],
        "terrain": [{"kind": "linear", "gradient": [0.1, 0.0]}],
        "source_no2": [{"kind": "gaussian", "amplitude": 5.0, "center": [3.0, 3.0], "width": 1.0}],
        "source_nox_extra": [{"kind": "constant", "value": 1.0}],
        "loss_rate": 0.2,
        "initial_no2": 1.0,
        "initial_nox": 2.0,
        "sampling": {"n_sites": 5, "n_predict_sites": 2, "noise_sd": 0.0, "n_distractors": 1},
    }
    data.update(overrides)
    return ScenarioSpec.model_validate(data)


class TestScheme:
    """Conservation, positivity and known transport solutions."""

    @pytest.mark.parametrize("boundary", ["periodic", "zero-flux"])
    def test_mass_conserved_without_sources(self, boundary):
        grid = GridSpec(nx=20, ny=16, dx=1.0, dy=1.0, dt=0.1, boundary=boundary)
        fields = uniform_fields(20, 16, v_x=0.7, v_y=-0.4, p=0.5)
        blob = gaussian_blob(20, 16, (8.0, 8.0), 2.0)
        states = simulate(grid, fields, SpeciesState(blob, 2 * blob), steps=40)
        assert states[-1].nox.sum() == pytest.approx(2 * blob.sum(), rel=1e-12)
        assert states[-1].no2.sum() == pytest.approx(blob.sum(), rel=1e-12)

    def test_positive_and_ordered(self):
        """Concentrations stay nonnegative and NO2 stays below NOx."""
        grid = GridSpec(nx=12, ny=12, dx=1.0, dy=1.0, dt=0.1)
        fields = uniform_fields(12, 12, v_x=1.0, p=0.3, rho_no2=0.5, rho_nox=0.8, loss_rate=0.5)
        blob = gaussian_blob(12, 12, (4.0, 6.0), 1.0)
        states = simulate(grid, fields, SpeciesState(blob * 0.9, blob), steps=60)
        for state in states:
            assert np.all(state.no2 >= 0)
            assert np.all(state.no2 <= state.nox + 1e-12)

    def test_diffusion_variance_growth(self):
        """A Gaussian spreads with variance growing by 2 p t."""
        grid = GridSpec(nx=64, ny=64, dx=1.0, dy=1.0, dt=0.2)
        fields = uniform_fields(64, 64, p=0.5)
        blob = gaussian_blob(64, 64, (32.0, 32.0), 3.0)
        _, var0 = moments(blob)
        final = simulate(grid, fields, SpeciesState(blob, blob), steps=50)[-1]
        _, var = moments(final.nox)
        assert var - var0 == pytest.approx(2 * 0.5 * 10.0, rel=0.05)

    def test_advection_moves_centroid(self):
        """Upwind transport moves the centre of mass at the wind speed."""
        grid = GridSpec(nx=40, ny=8, dx=1.0, dy=1.0, dt=0.5)
        fields = uniform_fields(40, 8, v_x=1.0)
        blob = gaussian_blob(40, 8, (10.0, 4.0), 2.0)
        mean0, _ = moments(blob)
        final = simulate(grid, fields, SpeciesState(blob, blob), steps=20)[-1]
        mean, _ = moments(final.nox)
        assert mean - mean0 == pytest.approx(10.0, rel=1e-6)

    def test_steady_state_with_uniform_source(self):
        """A uniform source balanced by removal settles at rho / loss."""
        grid = GridSpec(nx=4, ny=4, dx=1.0, dy=1.0, dt=0.1)
        fields = uniform_fields(4, 4, v_x=0.5, p=0.1, rho_no2=1.0, rho_nox=2.0, loss_rate=1.0)
        zero = np.zeros((4, 4))
        final = simulate(grid, fields, SpeciesState(zero, zero), steps=400)[-1]
        np.testing.assert_allclose(final.nox, 2.0, rtol=1e-6)
        np.testing.assert_allclose(final.no2, 1.0, rtol=1e-6)

    def test_record_every(self):
        grid = GridSpec(nx=4, ny=4, dx=1.0, dy=1.0, dt=0.25)
        zero = np.zeros((4, 4))
        states = simulate(grid, uniform_fields(4, 4), SpeciesState(zero, zero), steps=8, record_every=4)
        assert [s.time for s in states] == [0.0, 1.0, 2.0]


class TestStability:
    def test_advection_violation(self):
        grid = GridSpec(nx=4, ny=4, dx=1.0, dy=1.0, dt=2.0)
        with pytest.raises(CFLViolationError) as exc_info:
            check_stability(grid, uniform_fields(4, 4, v_x=1.0))
        assert exc_info.value.ratio_name == "advection"
        assert exc_info.value.ratio == pytest.approx(2.0)
        assert exc_info.value.exit_code == 4

    def test_diffusion_violation(self):
        grid = GridSpec(nx=4, ny=4, dx=1.0, dy=1.0, dt=1.0)
        with pytest.raises(CFLViolationError) as exc_info:
            check_stability(grid, uniform_fields(4, 4, p=0.6))
        assert exc_info.value.ratio_name == "diffusion"

    def test_positivity_violation(self):
        """Each ratio may pass alone while their sum breaks positivity."""
        grid = GridSpec(nx=4, ny=4, dx=1.0, dy=1.0, dt=0.5)
        with pytest.raises(CFLViolationError) as exc_info:
            check_stability(grid, uniform_fields(4, 4, v_x=1.0, v_y=1.0, p=0.2))
        assert exc_info.value.ratio_name == "positivity"


class TestFields:
    def test_source_ordering_enforced(self):
        with pytest.raises(ConfigurationError):
            uniform_fields(3, 3, rho_no2=2.0, rho_nox=1.0)

    def test_negative_diffusion_rejected(self):
        with pytest.raises(ConfigurationError):
            uniform_fields(3, 3, p=-0.1)

    def test_derived_wind(self):
        zero = np.zeros(1)
        w_stag, w_mix = derived_wind(zero + 3.0, zero + 4.0, zero + 6.0, zero + 8.0, zero, zero + 20.0)
        np.testing.assert_allclose(w_stag, [10.0])
        np.testing.assert_allclose(w_mix, [5.0])


class TestScenarios:
    """Scenario runs and site sampling."""

    def test_weekly_series_length(self):
        spec = small_scenario()
        weekly, _ = run_scenario(spec)
        assert len(weekly) == 6
        assert weekly[0].time == pytest.approx(3.0)

    def test_weeks_are_step_averages(self):
        spec = small_scenario()
        weekly, fields = run_scenario(spec)
        initial = SpeciesState(np.full((8, 8), 1.0), np.full((8, 8), 2.0))
        steps = simulate(spec.grid, fields, initial, steps=30)[21:31]
        np.testing.assert_allclose(weekly[0].nox, np.mean([s.nox for s in steps], axis=0), rtol=1e-12)
        np.testing.assert_allclose(weekly[0].no2, np.mean([s.no2 for s in steps], axis=0), rtol=1e-12)
        assert not np.allclose(weekly[0].nox, steps[-1].nox)

    def test_dt_must_divide_a_week(self):
        spec = small_scenario(grid={"nx": 8, "ny": 8, "dx": 1.0, "dy": 1.0, "dt": 0.3})
        with pytest.raises(ConfigurationError):
            run_scenario(spec)

    def test_noise_free_sampling_reads_the_grid(self):
        spec = small_scenario()
        weekly, fields = run_scenario(spec)
        dataset = sample_sites(weekly, fields, spec.grid, spec.sampling, seed=1)
        frame = dataset.frame
        monitored = frame[frame["site_id"].str.startswith("S")]
        assert len(frame) == 7 * 6
        assert frame[frame["site_id"].str.startswith("P")]["nox_ppb"].isna().all()
        for _, row in monitored.head(12).iterrows():
            i, j = int(row["x"] - 0.5), int(row["y"] - 0.5)
            state = weekly[int(row["week"])]
            assert row["nox_ppb"] == pytest.approx(state.nox[i, j])
            assert row["no2_ppb"] == pytest.approx(min(state.no2[i, j], state.nox[i, j]))
        assert "dst_1" in dataset.covariates

    def test_sites_occupy_distinct_cells(self):
        spec = small_scenario()
        dataset = simulate_dataset(spec, seed=4)
        cells = dataset.frame.groupby("site_id")[["x", "y"]].first()
        assert not cells.duplicated().any()

    def test_same_seed_same_bytes(self, tmp_path):
        spec = small_scenario(sampling={"n_sites": 5, "noise_sd": 0.1})
        first = write_dataset(simulate_dataset(spec, seed=9), tmp_path / "a.csv")
        second = write_dataset(simulate_dataset(spec, seed=9), tmp_path / "b.csv")
        assert first.read_bytes() == second.read_bytes()

    def test_unknown_scenario(self):
        with pytest.raises(ConfigurationError):
            load_scenario("no-such-scenario")

    def test_bundled_scenario(self):
        spec = load_scenario("plume-small")
        dataset = simulate_dataset(spec, seed=0)
        assert len(dataset) == 60 * 80
        observed = dataset.frame[["no2_ppb", "nox_ppb"]].to_numpy()
        assert np.all(observed[:, 0] <= observed[:, 1])
        assert np.all(observed >= 0)


class TestWeeklyMeans:
    def test_block_averages_with_end_times(self):
        series = [SpeciesState(np.full((2, 2), float(k)), np.full((2, 2), 2.0 * k), float(k)) for k in range(5)]
        weeks = weekly_means(series, 2)
        assert [w.time for w in weeks] == [2.0, 4.0]
        np.testing.assert_allclose([w.no2[0, 0] for w in weeks], [1.5, 3.5])
        np.testing.assert_allclose([w.nox[0, 0] for w in weeks], [3.0, 7.0])

    def test_partial_week_rejected(self):
        series = [SpeciesState(np.zeros((2, 2)), np.zeros((2, 2)), float(k)) for k in range(4)]
        with pytest.raises(ConfigurationError):
            weekly_means(series, 2)
