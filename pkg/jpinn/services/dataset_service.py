"""
Dataset service.

Loads, validates and writes the weekly observation CSV, tags rows with
their split and builds the numeric batches the trainer consumes.
"""

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from jpinn.config import BaseSplitSettings
from jpinn.exceptions import ConfigurationError, DataValidationError
from jpinn.schemas.records import FIXED_COLUMNS, SampleRecord, SplitTag, header
from jpinn.schemas.split import SplitPlan
from jpinn.utils.logging import get_logger, log_function_call
from jpinn.utils.random import make_rng

logger = get_logger(__name__)

OBS_COLUMNS = ["no2_ppb", "nox_ppb"]
COORD_COLUMNS = ["week", "x", "y", "z"]
WEEKS_PER_YEAR = 52


@dataclass
class FeatureBatch:
    """Numeric view of a set of rows."""

    coords: np.ndarray
    covariates: np.ndarray
    observed: np.ndarray

    def __len__(self) -> int:
        return len(self.coords)

    def take(self, index: np.ndarray) -> "FeatureBatch":
        return FeatureBatch(self.coords[index], self.covariates[index], self.observed[index])

    @staticmethod
    def concat(batches: Sequence["FeatureBatch"]) -> "FeatureBatch":
        return FeatureBatch(
            np.concatenate([b.coords for b in batches]),
            np.concatenate([b.covariates for b in batches]),
            np.concatenate([b.observed for b in batches]),
        )

    def observed_log(self, log_floor: float) -> np.ndarray:
        """``log(C + delta)`` of the observations, NaN where missing."""
        return np.log(self.observed + log_floor)


@dataclass
class Dataset:
    """Validated observation table plus its covariate names."""

    frame: pd.DataFrame
    covariates: List[str]
    oversample_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def site_ids(self) -> List[str]:
        return sorted(self.frame["site_id"].unique().tolist())

    @property
    def monitored_site_ids(self) -> List[str]:
        """Sites with at least one observation."""
        return sorted(self.frame["site_id"].iloc[self.observed_rows()].unique().tolist())

    def rows(self, split: Union[SplitTag, str]) -> np.ndarray:
        tag = SplitTag(split).value
        return np.flatnonzero(self.frame["split"].to_numpy() == tag)

    def observed_rows(self) -> np.ndarray:
        obs = self.frame[OBS_COLUMNS].to_numpy(dtype=np.float64)
        return np.flatnonzero(np.any(np.isfinite(obs), axis=1))

    def batch(self, rows: Optional[np.ndarray] = None) -> FeatureBatch:
        frame = self.frame if rows is None else self.frame.iloc[rows]
        return FeatureBatch(
            coords=frame[COORD_COLUMNS].to_numpy(dtype=np.float64),
            covariates=frame[self.covariates].to_numpy(dtype=np.float64).reshape(len(frame), len(self.covariates)),
            observed=frame[OBS_COLUMNS].to_numpy(dtype=np.float64),
        )

    def with_splits(self, tags: Sequence[str], oversample_index: Optional[np.ndarray] = None) -> "Dataset":
        frame = self.frame.copy()
        frame["split"] = list(tags)
        if oversample_index is None:
            oversample_index = np.empty(0, dtype=np.int64)
        index = np.asarray(oversample_index, dtype=np.int64)
        return replace(self, frame=frame, oversample_index=index)


# ----------------------------------------------------------------- csv io
def _row_record(row: Dict[str, Any], covariates: List[str]) -> SampleRecord:
    values = {k: row[k] for k in FIXED_COLUMNS}
    values["split"] = values["split"] or SplitTag.PREDICT.value
    values["covariates"] = {name: row[name] for name in covariates}
    return SampleRecord(**values)


@log_function_call
def load_and_validate(path: Union[str, Path]) -> Dataset:
    """
    Read a dataset CSV and validate every row.

    Raises:
        DataValidationError: Unreadable file, missing columns, invalid rows
            (all of them are reported) or duplicate ``(site_id, week)`` keys.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataValidationError(f"Cannot read dataset {path}", details={"error": str(e)}) from e

    missing = [c for c in FIXED_COLUMNS if c not in raw.columns]
    if missing:
        raise DataValidationError("Dataset header is missing required columns", details={"missing": missing})
    covariates = [c for c in raw.columns if c not in FIXED_COLUMNS]

    records: List[SampleRecord] = []
    row_errors: List[Dict[str, Any]] = []
    for position, row in enumerate(raw.to_dict(orient="records")):
        try:
            records.append(_row_record(row, covariates))
        except ValidationError as e:
            for err in e.errors():
                loc = ".".join(str(p) for p in err["loc"]) or "row"
                row_errors.append({"row": position + 2, "field": loc, "message": err["msg"]})

    if not row_errors:
        seen: Dict[Tuple[str, int], int] = {}
        for position, record in enumerate(records):
            key = (record.site_id, record.week)
            if key in seen:
                row_errors.append(
                    {
                        "row": position + 2,
                        "field": "site_id,week",
                        "message": f"duplicate key {key} (first at row {seen[key] + 2})",
                    }
                )
            else:
                seen[key] = position

    if row_errors:
        logger.warning("dataset_rejected", path=str(path), errors=len(row_errors))
        raise DataValidationError(
            f"Dataset {path} failed validation with {len(row_errors)} error(s)",
            row_errors=row_errors,
            details={"first": row_errors[:5]},
        )
    return from_records(records, covariates)


def from_records(records: Sequence[SampleRecord], covariates: Sequence[str]) -> Dataset:
    data: Dict[str, List[Any]] = {c: [] for c in header(list(covariates))}
    for r in records:
        data["site_id"].append(r.site_id)
        data["week"].append(r.week)
        data["x"].append(r.x)
        data["y"].append(r.y)
        data["z"].append(r.z)
        data["no2_ppb"].append(math.nan if r.no2_ppb is None else r.no2_ppb)
        data["nox_ppb"].append(math.nan if r.nox_ppb is None else r.nox_ppb)
        data["split"].append(r.split.value)
        for name in covariates:
            data[name].append(r.covariates[name])
    frame = pd.DataFrame(data)
    frame["week"] = frame["week"].astype(np.int64)
    for column in ["x", "y", "z"] + OBS_COLUMNS + list(covariates):
        frame[column] = frame[column].astype(np.float64)
    return Dataset(frame=frame, covariates=list(covariates))


def write_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset.frame[header(dataset.covariates)].to_csv(
        path, index=False, na_rep="", float_format="%.17g", lineterminator="\n"
    )
    return path


# -------------------------------------------------------- standardization
@dataclass
class Standardizer:
    """Per-column mean and scale; constant columns get scale 1."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, matrix: np.ndarray) -> "Standardizer":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or len(matrix) == 0:
            raise ConfigurationError("Cannot fit a standardizer on an empty matrix")
        mean = matrix.mean(axis=0)
        std = matrix.std(axis=0)
        return cls(mean=mean, scale=np.where(std > 0, std, 1.0))

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=np.float64) - self.mean) / self.scale

    def inverse_transform(self, matrix: np.ndarray) -> np.ndarray:
        return np.asarray(matrix, dtype=np.float64) * self.scale + self.mean


def model_inputs(batch: FeatureBatch) -> np.ndarray:
    return np.concatenate([batch.coords, batch.covariates], axis=1)


# ------------------------------------------------------------- splitting
def region_season_strata(frame: pd.DataFrame, tiles: int) -> List[Tuple[int, int, int]]:
    """Stratum key of every row: (x tile, y tile, quarter of the year)."""
    keys = []
    xs, ys = frame["x"].to_numpy(), frame["y"].to_numpy()
    bounds = []
    for values in (xs, ys):
        lo, hi = float(values.min()), float(values.max())
        bounds.append((lo, hi - lo if hi > lo else 1.0))
    for x, y, week in zip(xs, ys, frame["week"].to_numpy()):
        ix = min(int((x - bounds[0][0]) / bounds[0][1] * tiles), tiles - 1)
        iy = min(int((y - bounds[1][0]) / bounds[1][1] * tiles), tiles - 1)
        season = int((week % WEEKS_PER_YEAR) * 4 // WEEKS_PER_YEAR)
        keys.append((ix, iy, season))
    return keys


def _merge_small_strata(groups: Dict[Tuple[int, int, int], List[int]]) -> Dict[Tuple[int, int, int], List[int]]:
    merged = {k: list(v) for k, v in sorted(groups.items())}
    while len(merged) > 1:
        small = [k for k, v in merged.items() if len(v) < 2]
        if not small:
            break
        key = small[0]
        order = list(merged)
        position = order.index(key)
        target = order[position + 1] if position + 1 < len(order) else order[position - 1]
        logger.info("stratum_merged", stratum=list(key), into=list(target), size=len(merged[key]))
        merged[target] = sorted(merged[target] + merged.pop(key))
    return merged


def stratified_split(
    frame: pd.DataFrame, fraction: float, tiles: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Boolean mask selecting ``round(fraction * n)`` rows for training,
    allocated across region-season strata by largest remainder.
    """
    n = len(frame)
    mask = np.zeros(n, dtype=bool)
    if n == 0:
        return mask
    groups: Dict[Tuple[int, int, int], List[int]] = {}
    for position, key in enumerate(region_season_strata(frame, tiles)):
        groups.setdefault(key, []).append(position)
    groups = _merge_small_strata(groups)

    keys = list(groups)
    quotas = np.array([fraction * len(groups[k]) for k in keys])
    counts = np.floor(quotas).astype(int)
    remaining = int(round(fraction * n)) - int(counts.sum())
    if remaining > 0:
        order = sorted(range(len(keys)), key=lambda i: (-(quotas[i] - counts[i]), i))
        for i in order[:remaining]:
            counts[i] += 1
    for key, count in zip(keys, counts):
        members = np.asarray(groups[key])
        chosen = rng.permutation(members)[: min(count, len(members))]
        mask[chosen] = True
    return mask


def tail_oversample(observed: np.ndarray, rows: np.ndarray, share: float, rng: np.random.Generator) -> np.ndarray:
    """
    Row indices drawn (with replacement when needed) from the lowest and
    highest NOx deciles of ``rows``; ``round(share * n_tail)`` of them.
    NO2 stands in where NOx is missing.
    """
    if share <= 0 or len(rows) == 0:
        return np.empty(0, dtype=np.int64)
    value = np.where(np.isfinite(observed[rows, 1]), observed[rows, 1], observed[rows, 0])
    finite = np.isfinite(value)
    if not np.any(finite):
        return np.empty(0, dtype=np.int64)
    lo, hi = np.percentile(value[finite], [10, 90])
    tail = rows[finite & ((value <= lo) | (value >= hi))]
    extra = int(round(share * len(tail)))
    if extra == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(rng.choice(tail, size=extra, replace=extra > len(tail))).astype(np.int64)


@log_function_call
def apply_split_plan(dataset: Dataset, plan: SplitPlan, split: BaseSplitSettings) -> Dataset:
    """
    Tag every row for one bootstrap run.

    Rows at site-test sites become ``site-test``, rows at regular-test
    sites ``regular-test``; observed rows at training sites are split by
    region and season into ``train`` and ``regular-test``. Rows without
    observations, or at sites outside the plan, become ``predict``.
    """
    frame = dataset.frame
    site = frame["site_id"].to_numpy()
    observed = frame[OBS_COLUMNS].to_numpy(dtype=np.float64)
    has_obs = np.any(np.isfinite(observed), axis=1)
    tags = np.full(len(frame), SplitTag.PREDICT.value, dtype=object)

    tags[np.isin(site, plan.site_test_site_ids) & has_obs] = SplitTag.SITE_TEST.value
    tags[np.isin(site, plan.regular_site_ids) & has_obs] = SplitTag.REGULAR_TEST.value

    train_rows = np.flatnonzero(np.isin(site, plan.train_site_ids) & has_obs)
    rng = make_rng(plan.seed, plan.run_id, 3)
    mask = stratified_split(frame.iloc[train_rows], split.sample_train_fraction, split.region_tiles, rng)
    tags[train_rows[mask]] = SplitTag.TRAIN.value
    tags[train_rows[~mask]] = SplitTag.REGULAR_TEST.value

    oversample = tail_oversample(observed, train_rows[mask], split.oversample_tails, rng)
    logger.info(
        "split_applied",
        run_id=plan.run_id,
        train=int(mask.sum()),
        regular=int(np.sum(tags == SplitTag.REGULAR_TEST.value)),
        site_test=int(np.sum(tags == SplitTag.SITE_TEST.value)),
        oversampled=len(oversample),
    )
    return dataset.with_splits(tags.tolist(), oversample)
