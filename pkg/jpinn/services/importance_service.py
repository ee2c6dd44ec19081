"""Permutation importance of covariates on held-out rows."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from jpinn.exceptions import ConfigurationError
from jpinn.models.pinn import Model
from jpinn.physics.residuals import SPECIES
from jpinn.schemas.records import SplitTag, covariate_group
from jpinn.services.dataset_service import Dataset, FeatureBatch
from jpinn.utils.logging import get_logger, log_function_call
from jpinn.utils.random import make_rng

logger = get_logger(__name__)


@dataclass(frozen=True)
class ImportanceScore:
    """Mean RMSE increase (ppb) when one covariate column is permuted."""

    covariate: str
    group: str
    per_species: Dict[str, float]

    @property
    def score(self) -> float:
        values = [v for v in self.per_species.values() if np.isfinite(v)]
        return float(np.mean(values)) if values else 0.0


def _rmse(model: Model, batch: FeatureBatch, covariates: np.ndarray) -> np.ndarray:
    predicted = model.predict_ppb(batch.coords, covariates)
    columns = [SPECIES.index(s) for s in model.species]
    errors = batch.observed[:, columns] - predicted
    out = np.full(len(columns), np.nan)
    for k in range(len(columns)):
        present = np.isfinite(errors[:, k])
        if present.any():
            out[k] = float(np.sqrt(np.mean(errors[present, k] ** 2)))
    return out


def permutation_importance(
    model: Model,
    batch: FeatureBatch,
    covariates: Sequence[str],
    covariate: str,
    repeats: int = 5,
    seed: int = 0,
) -> ImportanceScore:
    """
    Importance of ``covariate``: the mean increase in RMSE over ``repeats``
    independent permutations of its column.
    """
    names = list(covariates)
    if covariate not in names:
        raise ConfigurationError(f"Unknown covariate '{covariate}'", details={"covariates": names})
    if repeats < 1:
        raise ConfigurationError("repeats must be positive")
    column = names.index(covariate)
    baseline = _rmse(model, batch, batch.covariates)
    rng = make_rng(seed, column, 17)
    increases = []
    for _ in range(repeats):
        permuted = batch.covariates.copy()
        permuted[:, column] = permuted[rng.permutation(len(batch)), column]
        increases.append(_rmse(model, batch, permuted) - baseline)
    mean_increase = np.mean(increases, axis=0)
    return ImportanceScore(
        covariate=covariate,
        group=covariate_group(covariate),
        per_species={s: float(v) for s, v in zip(model.species, mean_increase)},
    )


def importance_rows(dataset: Dataset) -> np.ndarray:
    """Site-test rows, else regular-test rows, else every observed row."""
    for tag in (SplitTag.SITE_TEST, SplitTag.REGULAR_TEST):
        rows = dataset.rows(tag)
        if len(rows):
            return rows
    return dataset.observed_rows()


@log_function_call
def rank_importance(
    model: Model, dataset: Dataset, repeats: int = 5, seed: int = 0, rows: Optional[np.ndarray] = None
) -> pd.DataFrame:
    """
    Scores of every covariate, ranked, with normalized shares.

    ``share`` is each covariate's positive score over the sum of positive
    scores; ``group_share`` sums the shares of the covariate's group.
    """
    rows = importance_rows(dataset) if rows is None else rows
    if len(rows) == 0:
        raise ConfigurationError("No observed rows to measure importance on")
    batch = dataset.batch(rows)
    scores: List[ImportanceScore] = [
        permutation_importance(model, batch, dataset.covariates, name, repeats, seed) for name in dataset.covariates
    ]
    frame = pd.DataFrame(
        [
            {
                "covariate": s.covariate,
                "group": s.group,
                **{f"score_{sp}": s.per_species.get(sp, np.nan) for sp in SPECIES},
                "score": s.score,
            }
            for s in scores
        ]
    )
    positive = frame["score"].clip(lower=0.0)
    total = float(positive.sum())
    frame["share"] = positive / total if total > 0 else 0.0
    frame["group_share"] = frame.groupby("group")["share"].transform("sum")
    frame = frame.sort_values(["score", "covariate"], ascending=[False, True], kind="mergesort").reset_index(drop=True)
    frame.insert(0, "rank", np.arange(1, len(frame) + 1))
    logger.info("importance_ranked", rows=len(rows), top=frame["covariate"].iloc[0] if len(frame) else None)
    return frame
