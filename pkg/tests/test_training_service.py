"""
Test suite for the training service.

Runs use the tiny networks of the ``tiny_settings`` fixture so that
every training call finishes in seconds.
"""

import math

import numpy as np
import pandas as pd
import pytest

from jpinn.exceptions import ConfigurationError, NumericFailureError
from jpinn.models import CompositeModel, PinnModel
from jpinn.services.training_service import (
    JointTrainer,
    TrainingData,
    apply_mode,
    metrics,
    prepare_model,
    train_model,
)


def tag_by_site(dataset):
    """First eight sites train, two regular-test sites, two site-test sites."""
    order = {s: i for i, s in enumerate(dataset.site_ids)}
    tags = []
    for site in dataset.frame["site_id"]:
        position = order[site]
        tags.append("train" if position < 8 else "regular-test" if position < 10 else "site-test")
    return dataset.with_splits(tags)


@pytest.fixture
def tagged(dataset):
    return tag_by_site(dataset)


class TestMetrics:
    """R^2 and RMSE per species."""

    def test_perfect_prediction(self):
        observed = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 7.0]])
        scores = metrics(observed, observed)
        assert scores["no2"].r2 == pytest.approx(1.0)
        assert scores["nox"].rmse == 0.0
        assert scores["nox"].n == 3

    def test_known_values(self):
        observed = np.array([[1.0, 1.0], [3.0, 1.0]])
        predicted = np.array([[2.0, 1.0], [2.0, 3.0]])
        scores = metrics(observed, predicted)
        assert scores["no2"].rmse == pytest.approx(1.0)
        assert scores["no2"].r2 == pytest.approx(0.0)

    def test_zero_variance_is_undefined(self):
        """Constant observations give an undefined R^2 but a finite RMSE."""
        observed = np.array([[2.0, 1.0], [2.0, 3.0]])
        scores = metrics(observed, observed + 1.0)
        assert not scores["no2"].r2_defined
        assert math.isnan(scores["no2"].r2)
        assert scores["no2"].rmse == pytest.approx(1.0)

    def test_missing_observations_skipped(self):
        observed = np.array([[np.nan, 1.0], [2.0, 2.0], [4.0, 3.0]])
        predicted = np.array([[100.0, 1.0], [2.0, 2.0], [4.0, 3.0]])
        scores = metrics(observed, predicted)
        assert scores["no2"].n == 2
        assert scores["no2"].rmse == 0.0

    def test_misaligned_arrays_raise(self):
        with pytest.raises(ConfigurationError):
            metrics(np.zeros((3, 2)), np.zeros((2, 2)))


class TestModes:
    """Variant configuration."""

    def test_baseline_zeroes_physics_weights(self, tiny_settings):
        config = apply_mode(tiny_settings.training, "baseline-no-physics")
        assert config.lambdas == [0.0] * 5 + [1.0, 1.0]
        assert tiny_settings.training.lambdas == [1.0] * 7

    def test_no_elevation(self, tiny_settings):
        assert apply_mode(tiny_settings.training, "no-elevation-pde").use_elevation is False

    def test_joint_is_unchanged(self, tiny_settings):
        assert apply_mode(tiny_settings.training, "joint") is tiny_settings.training

    def test_unknown_mode(self, tiny_settings):
        with pytest.raises(ConfigurationError):
            apply_mode(tiny_settings.training, "transformer")


class TestPrepareModel:
    def test_thresholds_from_training_maximum(self, tagged, tiny_settings):
        data = TrainingData.from_dataset(tagged)
        model = prepare_model(data, ("no2", "nox"), tagged.covariates, tiny_settings.training, tiny_settings.network, 0)
        train = data.train_unique.observed
        expected = math.log(1.2 * np.nanmax(train[:, 1]) + 0.01)
        assert model.thresholds["nox"] == pytest.approx(expected)
        low, high = model.z_range
        assert low == pytest.approx(data.train_unique.coords[:, 3].min())
        assert high == pytest.approx(data.train_unique.coords[:, 3].max())

    def test_no_training_rows(self, dataset, tiny_settings):
        data = TrainingData.from_dataset(dataset.with_splits(["predict"] * len(dataset)))
        with pytest.raises(ConfigurationError):
            prepare_model(data, ("no2", "nox"), dataset.covariates, tiny_settings.training, tiny_settings.network, 0)


class TestJointTrainer:
    """Loss evaluation, updates and the epoch loop."""

    @pytest.fixture
    def trainer(self, tagged, tiny_settings):
        data = TrainingData.from_dataset(tagged)
        model = prepare_model(data, ("no2", "nox"), tagged.covariates, tiny_settings.training, tiny_settings.network, 0)
        return JointTrainer(model, tiny_settings.training, seed=0), data

    def test_loss_terms_cover_all_seven(self, trainer):
        trainer, data = trainer
        batch = data.train.take(np.arange(5))
        breakdown = trainer.loss_terms(batch, 5)
        assert sorted(breakdown.term_means) == [1, 2, 3, 4, 5, 6, 7]
        assert breakdown.loss.item() == pytest.approx(sum(breakdown.term_vector()))

    def test_small_step_decreases_loss(self, trainer):
        """One Adam step with a small learning rate lowers the loss of its batch."""
        trainer, data = trainer
        trainer.config = trainer.config.model_copy(update={"learning_rate": 1e-4})
        batch = data.train.take(np.arange(1))
        before = trainer.loss_terms(batch, 1).loss.item()
        trainer.step(batch, 1)
        after = trainer.loss_terms(batch, 1).loss.item()
        assert after < before

    def test_history_shape(self, trainer):
        trainer, data = trainer
        history = trainer.train(data)
        assert len(history) == 2
        frame = history.to_frame()
        assert list(frame.columns[:9]) == ["epoch", "loss"] + [f"e{i}" for i in range(1, 8)]
        assert "r2_site_nox" in frame.columns
        assert np.all(np.isfinite(history.losses))

    def test_regular_only_policy_needs_regular_rows(self, dataset, tiny_settings):
        data = TrainingData.from_dataset(dataset)
        config = tiny_settings.training.model_copy(update={"physics_sample_policy": "train+regular-only"})
        model = prepare_model(data, ("no2", "nox"), dataset.covariates, config, tiny_settings.network, 0)
        with pytest.raises(ConfigurationError):
            JointTrainer(model, config, seed=0).train(data)

    def test_regular_only_policy_uses_regular_rows(self, trainer):
        trainer, data = trainer
        trainer.config = trainer.config.model_copy(update={"physics_sample_policy": "train+regular-only"})
        assert trainer._physics_partitions(data) == [data.regular]

    def test_all_samples_policy_uses_every_partition(self, trainer):
        trainer, data = trainer
        assert len(trainer._physics_partitions(data)) == 2

    def test_supervised_terms_need_training_rows(self, trainer, dataset):
        trainer, _ = trainer
        empty = TrainingData.from_dataset(dataset.with_splits(["regular-test"] * len(dataset)))
        with pytest.raises(ConfigurationError):
            trainer.train(empty)

    def test_numeric_failure_reports_position(self, trainer, mocker):
        trainer, data = trainer
        mocker.patch.object(JointTrainer, "step", side_effect=NumericFailureError("boom", node="exp#1"))
        with pytest.raises(NumericFailureError) as exc_info:
            trainer.train(data)
        assert exc_info.value.epoch == 0
        assert exc_info.value.batch == 0
        assert exc_info.value.node == "exp#1"


class TestTrainModel:
    """End-to-end training of the variants."""

    def test_deterministic(self, tagged, tiny_settings):
        """The same seed reproduces the training log exactly."""
        first = train_model(tagged, tiny_settings, "joint", seed=5).history_frame()
        second = train_model(tagged, tiny_settings, "joint", seed=5).history_frame()
        pd.testing.assert_frame_equal(first, second)

    def test_separate_mode(self, tagged, tiny_settings):
        result = train_model(tagged, tiny_settings, "separate")
        assert isinstance(result.model, CompositeModel)
        assert set(result.histories) == {"no2", "nox"}
        assert result.history_frame()["e5"].eq(0.0).all()

    def test_baseline_loss_is_supervised_only(self, tagged, tiny_settings):
        """Physics terms are still logged but do not enter the loss."""
        result = train_model(tagged, tiny_settings, "baseline-no-physics")
        assert isinstance(result.model, PinnModel)
        frame = result.history_frame()
        np.testing.assert_allclose(frame["loss"], frame["e6"] + frame["e7"], rtol=1e-9)
        assert (frame["e1"] > 0).all()

    def test_write_history(self, tagged, tiny_settings, tmp_path):
        path = train_model(tagged, tiny_settings, "joint").write_history(tmp_path / "log" / "training_log.csv")
        frame = pd.read_csv(path)
        assert frame["model"].unique().tolist() == ["joint"]
        assert len(frame) == 2
