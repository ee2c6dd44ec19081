"""
Test suite for plain-text model snapshots.
"""

import numpy as np
import pytest

from jpinn.config import BaseNetworkSettings
from jpinn.exceptions import ConfigurationError
from jpinn.models import CompositeModel, PinnModel
from jpinn.models.snapshot import HEADER, dumps, load_snapshot, loads, save_snapshot

NETWORK = BaseNetworkSettings(estimation_widths=[5, 3], parameter_widths=[4])


def trained_looking_model(species=("no2", "nox"), seed=3) -> PinnModel:
    model = PinnModel(species, ["met_vx", "emi_source"], seed=seed, network=NETWORK)
    model.fit_inputs([1.0, 2.0, 3.0, 0.5, 0.0, 1.0], [2.0, 1.0, 1.5, 0.2, 1.0, 3.0])
    model.set_z_range(0.1, 2.5)
    model.set_thresholds({s: 4.2 for s in model.species})
    return model


@pytest.fixture
def inputs():
    rng = np.random.default_rng(8)
    return rng.normal(size=(6, 4)), rng.normal(size=(6, 2))


class TestSnapshot:
    def test_round_trip_predictions(self, tmp_path, inputs):
        model = trained_looking_model()
        path = save_snapshot(model, tmp_path / "model.snapshot")
        loaded = load_snapshot(path)
        assert isinstance(loaded, PinnModel)
        np.testing.assert_array_equal(loaded.predict_log(*inputs), model.predict_log(*inputs))
        np.testing.assert_array_equal(loaded.predict_theta(*inputs), model.predict_theta(*inputs))
        assert loaded.thresholds == model.thresholds
        assert loaded.z_range == (0.1, 2.5)

    def test_rewrite_is_byte_identical(self):
        text = dumps(trained_looking_model())
        assert text.startswith(HEADER + "\n")
        assert dumps(loads(text)) == text

    def test_composite_model(self, inputs):
        composite = CompositeModel(
            [trained_looking_model(("nox",), seed=1), trained_looking_model(("no2",), seed=2)]
        )
        loaded = loads(dumps(composite))
        assert isinstance(loaded, CompositeModel)
        assert loaded.species == ("no2", "nox")
        np.testing.assert_array_equal(loaded.predict_ppb(*inputs), composite.predict_ppb(*inputs))

    def test_unbounded_elevation_range(self):
        model = PinnModel(["nox"], ["met_vx"], seed=0, network=NETWORK)
        model.set_thresholds({"nox": 1.0})
        assert loads(dumps(model)).z_range == (-np.inf, np.inf)

    def test_wrong_header(self):
        with pytest.raises(ConfigurationError):
            loads("# something else\n")

    def test_truncated_file(self):
        text = dumps(trained_looking_model())
        with pytest.raises(ConfigurationError):
            loads("\n".join(text.splitlines()[:6]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_snapshot(tmp_path / "absent.snapshot")
