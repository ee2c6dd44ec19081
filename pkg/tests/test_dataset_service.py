"""
Test suite for the dataset service.

Covers CSV validation, the region-season sample split, tail oversampling
and tagging rows from a bootstrap split plan.
"""

import numpy as np
import pandas as pd
import pytest

from jpinn.config import create_settings
from jpinn.exceptions import ConfigurationError, DataValidationError
from jpinn.schemas.records import SplitTag
from jpinn.services.dataset_service import (
    Standardizer,
    apply_split_plan,
    load_and_validate,
    stratified_split,
    tail_oversample,
    write_dataset,
)
from jpinn.services.ensemble_service import site_split_plan

from conftest import COVARIATES, make_dataset


@pytest.fixture
def small_csv(tmp_path):
    """Three monitored sites and one predict-only site over two weeks."""
    return write_dataset(make_dataset(n_sites=3, n_weeks=2, n_predict_sites=1), tmp_path / "data.csv")


class TestLoadAndValidate:
    """Reading and checking dataset files."""

    def test_loads_valid_file(self, small_csv):
        dataset = load_and_validate(small_csv)
        assert len(dataset) == 8
        assert dataset.covariates == COVARIATES
        assert dataset.site_ids == ["S000", "S001", "S002", "S003"]
        assert dataset.monitored_site_ids == ["S000", "S001", "S002"]
        predict = dataset.rows(SplitTag.PREDICT)
        assert dataset.frame["nox_ppb"].iloc[predict].isna().all()

    def test_missing_column(self, small_csv):
        frame = pd.read_csv(small_csv, dtype=str, keep_default_na=False).drop(columns=["z"])
        frame.to_csv(small_csv, index=False)
        with pytest.raises(DataValidationError) as exc_info:
            load_and_validate(small_csv)
        assert exc_info.value.details["missing"] == ["z"]

    def test_reports_every_bad_row(self, small_csv):
        frame = pd.read_csv(small_csv, dtype=str, keep_default_na=False)
        frame.loc[0, "nox_ppb"] = "-1"
        frame.loc[2, "no2_ppb"] = "1e6"
        frame.to_csv(small_csv, index=False)
        with pytest.raises(DataValidationError) as exc_info:
            load_and_validate(small_csv)
        rows = sorted({e["row"] for e in exc_info.value.row_errors})
        assert rows == [2, 4]

    def test_duplicate_keys(self, small_csv):
        frame = pd.read_csv(small_csv, dtype=str, keep_default_na=False)
        pd.concat([frame, frame.iloc[[1]]]).to_csv(small_csv, index=False)
        with pytest.raises(DataValidationError) as exc_info:
            load_and_validate(small_csv)
        assert len(exc_info.value.row_errors) == 1
        assert "duplicate" in exc_info.value.row_errors[0]["message"]

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(DataValidationError):
            load_and_validate(tmp_path / "absent.csv")


class TestStratifiedSplit:
    """Sample split within training sites."""

    def test_exact_total(self, dataset):
        mask = stratified_split(dataset.frame, 0.78, 4, np.random.default_rng(0))
        assert mask.sum() == round(0.78 * len(dataset))

    def test_same_seed_same_mask(self, dataset):
        a = stratified_split(dataset.frame, 0.78, 4, np.random.default_rng(5))
        b = stratified_split(dataset.frame, 0.78, 4, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_balanced_across_seasons(self):
        frame = pd.DataFrame({"x": [1.0] * 20, "y": [1.0] * 20, "week": [0] * 10 + [30] * 10})
        mask = stratified_split(frame, 0.5, 4, np.random.default_rng(1))
        assert mask[:10].sum() == 5
        assert mask[10:].sum() == 5

    def test_empty_frame(self):
        frame = pd.DataFrame({"x": [], "y": [], "week": []})
        assert stratified_split(frame, 0.5, 4, np.random.default_rng(0)).size == 0


class TestTailOversample:
    def test_draws_from_tails(self):
        observed = np.column_stack([np.arange(1.0, 101.0) * 0.5, np.arange(1.0, 101.0)])
        rows = np.arange(100)
        extra = tail_oversample(observed, rows, 0.2, np.random.default_rng(0))
        assert len(extra) == 4
        values = observed[extra, 1]
        assert np.all((values <= 10) | (values >= 91))

    def test_zero_share(self):
        observed = np.ones((5, 2))
        assert tail_oversample(observed, np.arange(5), 0.0, np.random.default_rng(0)).size == 0


class TestApplySplitPlan:
    """Tagging rows for one bootstrap run."""

    def test_tags_follow_sites(self):
        dataset = make_dataset(n_sites=12, n_weeks=8, n_predict_sites=1)
        settings = create_settings("desk")
        plan = site_split_plan(dataset.monitored_site_ids, 0, 0, 0.632)
        tagged = apply_split_plan(dataset, plan, settings.split)
        frame = tagged.frame

        site_rows = frame[frame["site_id"].isin(plan.site_test_site_ids)]
        assert (site_rows["split"] == SplitTag.SITE_TEST.value).all()
        regular_rows = frame[frame["site_id"].isin(plan.regular_site_ids)]
        assert (regular_rows["split"] == SplitTag.REGULAR_TEST.value).all()
        train_rows = frame[frame["site_id"].isin(plan.train_site_ids)]
        assert set(train_rows["split"]) == {SplitTag.TRAIN.value, SplitTag.REGULAR_TEST.value}
        assert (frame[frame["site_id"] == "S012"]["split"] == SplitTag.PREDICT.value).all()

    def test_oversample_index_points_at_training_rows(self, dataset):
        settings = create_settings("desk")
        plan = site_split_plan(dataset.monitored_site_ids, 0, 2, 0.632)
        tagged = apply_split_plan(dataset, plan, settings.split)
        assert len(tagged.oversample_index) > 0
        assert set(tagged.oversample_index) <= set(tagged.rows(SplitTag.TRAIN))
        assert not tagged.frame.duplicated(["site_id", "week"]).any()


class TestStandardizer:
    def test_constant_column_keeps_unit_scale(self):
        matrix = np.array([[1.0, 5.0], [3.0, 5.0]])
        scaler = Standardizer.fit(matrix)
        np.testing.assert_allclose(scaler.scale, [1.0, 1.0])
        np.testing.assert_allclose(scaler.transform(matrix), [[-1.0, 0.0], [1.0, 0.0]])

    def test_empty_matrix(self):
        with pytest.raises(ConfigurationError):
            Standardizer.fit(np.empty((0, 3)))
