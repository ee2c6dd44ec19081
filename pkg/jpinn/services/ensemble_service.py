"""
Ensemble service.

Bootstrap bagging over monitoring sites and the 0.632+ uncertainty
estimate: ensemble means, variance samples, weighted bias/noise pools
stratified by predicted level, and percentile prediction intervals.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from jpinn.config import RunConfig
from jpinn.exceptions import ConfigurationError, NumericFailureError, SchemaError
from jpinn.physics.residuals import SPECIES
from jpinn.schemas.records import SplitTag
from jpinn.schemas.split import SplitPlan
from jpinn.services.dataset_service import Dataset, apply_split_plan
from jpinn.services.training_service import TrainHistory, train_model
from jpinn.utils.logging import LogContext, get_logger, log_function_call
from jpinn.utils.random import derive_seed, make_rng

logger = get_logger(__name__)

MIN_SITES = 10
BOOTSTRAP_WEIGHT = 0.632
OVERFIT_SLOPE = 0.184


# ------------------------------------------------------------------ splits
def site_split_plan(
    site_ids: Sequence[str], run: int, seed: int, train_fraction: float = BOOTSTRAP_WEIGHT
) -> SplitPlan:
    """
    Seeded site partition of one run: ``round(train_fraction * S)`` training
    sites, the remainder halved into regular-test and site-test sites.
    """
    sites = sorted(set(site_ids))
    if len(sites) < MIN_SITES:
        raise ConfigurationError(f"At least {MIN_SITES} sites are required", details={"sites": len(sites)})
    n_train = int(round(train_fraction * len(sites)))
    rest = len(sites) - n_train
    n_regular = rest // 2
    if n_train == 0 or n_regular == 0 or rest - n_regular == 0:
        raise ConfigurationError("Site partitions would be empty", details={"sites": len(sites)})

    order = make_rng(seed, run, 5).permutation(len(sites))
    chosen = [sites[i] for i in order]
    return SplitPlan(
        run_id=run,
        seed=derive_seed(seed, run),
        train_site_ids=tuple(sorted(chosen[:n_train])),
        regular_site_ids=tuple(sorted(chosen[n_train : n_train + n_regular])),
        site_test_site_ids=tuple(sorted(chosen[n_train + n_regular :])),
    )


def make_bootstrap_splits(
    site_ids: Sequence[str], runs: int, seed: int, train_fraction: float = BOOTSTRAP_WEIGHT
) -> List[SplitPlan]:
    """One :func:`site_split_plan` per ensemble member; at least two members."""
    if runs < 2:
        raise ConfigurationError("An ensemble needs at least two bootstrap runs", details={"runs": runs})
    return [site_split_plan(site_ids, run, seed, train_fraction) for run in range(runs)]


# ---------------------------------------------------------- 0.632+ algebra
def ensemble_mean(predictions: Union[np.ndarray, Sequence[np.ndarray]]) -> np.ndarray:
    """Arithmetic mean over runs of ``(B, n)`` (or ``(B, n, k)``) predictions."""
    if not isinstance(predictions, np.ndarray):
        shapes = {np.shape(p) for p in predictions}
        if len(shapes) != 1:
            raise SchemaError("Run predictions are not aligned", details={"shapes": sorted(map(str, shapes))})
    stacked = np.asarray(predictions, dtype=np.float64)
    if stacked.ndim < 2 or stacked.shape[0] < 1:
        raise SchemaError("Predictions must be shaped (runs, targets, ...)")
    return stacked.mean(axis=0)


def variance_samples(mu: np.ndarray, predictions: np.ndarray) -> np.ndarray:
    """``mu - y_b`` for every run ``b``; shaped like ``predictions``."""
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.shape[1:] != np.shape(mu):
        raise SchemaError("Ensemble mean and predictions are not aligned")
    return np.asarray(mu)[None, ...] - predictions


def no_information_rate(observed: np.ndarray, predicted: np.ndarray) -> float:
    """
    Mean squared error over every (observation, prediction) pair.

    Expands ``(1/n^2) sum_i sum_j (y_i - p_j)^2`` in closed form.
    """
    y = np.asarray(observed, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if y.size != p.size or y.size == 0:
        raise SchemaError("Observations and predictions must be nonempty and aligned")
    return float(np.mean(y**2) - 2.0 * y.mean() * p.mean() + np.mean(p**2))


def relative_overfitting_rate(test_error: float, train_error: float, gamma: float) -> float:
    """``(eps_test - eps_train) / (gamma - eps_train)`` clamped to [0, 1]."""
    denominator = gamma - train_error
    if denominator == 0.0:
        raise NumericFailureError(
            "No-information rate equals the training error",
            details={"gamma": gamma, "train_error": train_error},
        )
    return float(min(1.0, max(0.0, (test_error - train_error) / denominator)))


def bootstrap_weight(rate: float) -> float:
    return BOOTSTRAP_WEIGHT / (1.0 - OVERFIT_SLOPE * rate)


@dataclass
class BiasNoiseEstimate:
    """Weights and error rates of the 0.632+ estimate for one species."""

    gamma: float
    train_error: float
    regular_error: float
    site_error: float
    rate_regular: float
    rate_site: float
    weight_regular: float
    weight_site: float
    weight_train: float
    combined: float


def bias_noise_estimate(
    train_errors: np.ndarray,
    regular_errors: np.ndarray,
    site_errors: np.ndarray,
    gamma: float,
    renormalize: bool = False,
) -> BiasNoiseEstimate:
    """
    Weights of the regular-test and site-test errors.

    With ``renormalize`` the three weights are rescaled to sum to one;
    otherwise the training weight is ``1 - w_regular - w_site`` and may be
    negative.
    """
    pools = {"train": train_errors, "regular": regular_errors, "site": site_errors}
    for name, pool in pools.items():
        if np.size(pool) == 0:
            raise ConfigurationError(f"Empty {name} error pool")
    e_train, e_regular, e_site = (float(np.mean(np.square(p))) for p in pools.values())
    r_regular = relative_overfitting_rate(e_regular, e_train, gamma)
    r_site = relative_overfitting_rate(e_site, e_train, gamma)
    w_regular, w_site = bootstrap_weight(r_regular), bootstrap_weight(r_site)
    w_train = 1.0 - w_regular - w_site
    if renormalize:
        scale = abs(w_train) + w_regular + w_site
        w_train, w_regular, w_site = abs(w_train) / scale, w_regular / scale, w_site / scale
    return BiasNoiseEstimate(
        gamma=gamma,
        train_error=e_train,
        regular_error=e_regular,
        site_error=e_site,
        rate_regular=r_regular,
        rate_site=r_site,
        weight_regular=w_regular,
        weight_site=w_site,
        weight_train=w_train,
        combined=w_train * e_train + w_regular * e_regular + w_site * e_site,
    )


def weighted_error_pool(
    estimate: BiasNoiseEstimate,
    train_errors: np.ndarray,
    regular_errors: np.ndarray,
    site_errors: np.ndarray,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> np.ndarray:
    """Samples ``w_tr e_tr[i] + w_reg e_reg[j] + w_site e_site[k]`` with random i, j, k."""
    size = size or max(len(train_errors), len(regular_errors), len(site_errors))
    return (
        estimate.weight_train * rng.choice(train_errors, size)
        + estimate.weight_regular * rng.choice(regular_errors, size)
        + estimate.weight_site * rng.choice(site_errors, size)
    )


# ------------------------------------------------------------------ levels
def level_edges(values: np.ndarray, levels: int = 8) -> np.ndarray:
    """Inner quantile edges splitting ``values`` into ``levels`` equal-count bins."""
    return np.quantile(np.asarray(values, dtype=np.float64).ravel(), np.arange(1, levels) / levels)


def assign_levels(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Level index in ``0..len(edges)`` of each value; every value gets exactly one."""
    return np.searchsorted(edges, np.asarray(values, dtype=np.float64), side="right")


def _fallback_level(level: int, populated: Sequence[int]) -> int:
    return min(populated, key=lambda p: (abs(p - level), p))


def level_pools(
    errors: np.ndarray, error_levels: np.ndarray, levels: int
) -> Tuple[Dict[int, np.ndarray], List[int]]:
    """Errors grouped by level; empty levels borrow the nearest populated one."""
    populated = sorted(set(int(v) for v in np.unique(error_levels)))
    if not populated:
        raise ConfigurationError("Error pool is empty")
    pools, borrowed = {}, []
    for level in range(levels):
        source = level if level in populated else _fallback_level(level, populated)
        if source != level:
            borrowed.append(level)
        pools[level] = errors[error_levels == source]
    return pools, borrowed


def interval_estimate(
    mu: np.ndarray,
    variance: np.ndarray,
    target_levels: np.ndarray,
    bias_pools: Dict[int, np.ndarray],
    alpha: float = 0.05,
    max_pool_size: int = 200_000,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Percentile intervals from level-stratified error pools.

    The pool of level ``l`` is the cross sum of the variance samples of all
    targets in that level with the level's bias/noise samples, subsampled to
    ``max_pool_size`` pairs. Bounds are clamped so each interval contains
    ``mu`` and the lower bound is nonnegative.
    """
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha must be in (0, 1)")
    rng = rng or np.random.default_rng(0)
    mu = np.asarray(mu, dtype=np.float64)
    lower, upper = np.empty_like(mu), np.empty_like(mu)
    for level in np.unique(target_levels):
        members = np.flatnonzero(target_levels == level)
        eta = variance[:, members].ravel()
        bias = bias_pools[int(level)]
        if eta.size == 0 or bias.size == 0:
            raise ConfigurationError(f"Empty error pool for level {level}")
        if eta.size * bias.size <= max_pool_size:
            pool = (eta[:, None] + bias[None, :]).ravel()
        else:
            pool = rng.choice(eta, max_pool_size) + rng.choice(bias, max_pool_size)
        q_lo, q_hi = np.percentile(pool, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
        lower[members] = np.maximum(mu[members] + min(q_lo, 0.0), 0.0)
        upper[members] = mu[members] + max(q_hi, 0.0)
    return np.minimum(lower, mu), upper


# ------------------------------------------------------------------ result
@dataclass
class MemberRun:
    plan: SplitPlan
    tags: np.ndarray
    predictions: np.ndarray
    history: Dict[str, TrainHistory]


@dataclass
class SpeciesUncertainty:
    estimate: BiasNoiseEstimate
    edges: np.ndarray
    levels: np.ndarray
    pools: Dict[int, np.ndarray]
    borrowed_levels: List[int]
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class EnsembleResult:
    """Aggregated bootstrap ensemble over every dataset row."""

    dataset: Dataset
    members: List[MemberRun]
    mean: np.ndarray
    variance: np.ndarray
    uncertainty: Dict[str, SpeciesUncertainty] = field(default_factory=dict)

    @property
    def predictions(self) -> np.ndarray:
        return np.stack([m.predictions for m in self.members])


def decomposition_report(result: EnsembleResult) -> pd.DataFrame:
    """
    Share of the generalization error carried by model variance versus
    bias and noise, per species: ``mean|eta| / (mean|eta| + mean|o|)``.
    """
    rows = []
    for k, species in enumerate(SPECIES):
        unc = result.uncertainty.get(species)
        if unc is None:
            continue
        variance_part = float(np.mean(np.abs(result.variance[:, :, k])))
        bias_values = np.concatenate([p for p in unc.pools.values()]) if unc.pools else np.zeros(0)
        bias_part = float(np.mean(np.abs(bias_values))) if bias_values.size else 0.0
        total = variance_part + bias_part
        share = variance_part / total if total > 0 else 0.0
        rows.append(
            {
                "species": species,
                "variance_component": variance_part,
                "bias_noise_component": bias_part,
                "variance_share": share,
                "bias_noise_share": 1.0 - share,
                "gamma": unc.estimate.gamma,
                "rate_regular": unc.estimate.rate_regular,
                "rate_site": unc.estimate.rate_site,
                "weight_regular": unc.estimate.weight_regular,
                "weight_site": unc.estimate.weight_site,
                "weight_train": unc.estimate.weight_train,
                "generalization_error": unc.estimate.combined,
            }
        )
    return pd.DataFrame(rows)


# ------------------------------------------------------------- execution
class EnsembleService:
    """Trains bootstrap members and aggregates them."""

    def __init__(self, settings: RunConfig, mode: str = "joint", jobs: Optional[int] = None):
        self.settings = settings
        self.mode = mode
        self.jobs = jobs or settings.ensemble.jobs

    def _run_member(self, dataset: Dataset, plan: SplitPlan) -> MemberRun:
        with LogContext(run_id=plan.run_id):
            tagged = apply_split_plan(dataset, plan, self.settings.split)
            result = train_model(tagged, self.settings, self.mode, seed=plan.seed)
            batch = dataset.batch()
            predictions = result.model.predict_ppb(batch.coords, batch.covariates, self.settings.training.eval_chunk)
            logger.info("member_completed", run_id=plan.run_id)
            return MemberRun(plan, tagged.frame["split"].to_numpy(), predictions, result.histories)

    @log_function_call
    def run(self, dataset: Dataset) -> EnsembleResult:
        cfg = self.settings.ensemble
        plans = make_bootstrap_splits(
            dataset.monitored_site_ids, cfg.members, self.settings.seed, self.settings.split.site_train_fraction
        )
        members = Parallel(n_jobs=self.jobs, prefer="threads")(
            delayed(self._run_member)(dataset, plan) for plan in plans
        )
        return self.aggregate(dataset, list(members))

    def aggregate(self, dataset: Dataset, members: List[MemberRun]) -> EnsembleResult:
        cfg = self.settings.ensemble
        stacked = np.stack([m.predictions for m in members])
        mu = ensemble_mean(stacked)
        eta = variance_samples(mu, stacked)
        result = EnsembleResult(dataset=dataset, members=members, mean=mu, variance=eta)
        observed = dataset.frame[["no2_ppb", "nox_ppb"]].to_numpy(dtype=np.float64)
        rng = make_rng(self.settings.seed, 13)

        for k, species in enumerate(SPECIES):
            errors: Dict[str, List[np.ndarray]] = {"train": [], "regular": [], "site": []}
            error_mu: Dict[str, List[np.ndarray]] = {"train": [], "regular": [], "site": []}
            gamma_obs, gamma_pred = [], []
            for m in members:
                present = np.isfinite(observed[:, k])
                for name, tag in (
                    ("train", SplitTag.TRAIN),
                    ("regular", SplitTag.REGULAR_TEST),
                    ("site", SplitTag.SITE_TEST),
                ):
                    rows = np.flatnonzero((m.tags == tag.value) & present)
                    errors[name].append(observed[rows, k] - m.predictions[rows, k])
                    error_mu[name].append(mu[rows, k])
                rows = np.flatnonzero((m.tags == SplitTag.TRAIN.value) & present)
                gamma_obs.append(observed[rows, k])
                gamma_pred.append(m.predictions[rows, k])

            pooled = {name: np.concatenate(v) for name, v in errors.items()}
            pooled_mu = {name: np.concatenate(v) for name, v in error_mu.items()}
            gamma = float(np.mean([no_information_rate(o, p) for o, p in zip(gamma_obs, gamma_pred) if o.size]))
            estimate = bias_noise_estimate(
                pooled["train"], pooled["regular"], pooled["site"], gamma, cfg.renormalize_weights
            )

            edges = level_edges(mu[:, k], cfg.levels)
            split_levels = {name: assign_levels(pooled_mu[name], edges) for name in pooled}
            per_split = {}
            borrowed: List[int] = []
            for name in pooled:
                per_split[name], missing = level_pools(pooled[name], split_levels[name], cfg.levels)
                borrowed.extend(missing)
            pools = {
                level: weighted_error_pool(
                    estimate, per_split["train"][level], per_split["regular"][level], per_split["site"][level], rng
                )
                for level in range(cfg.levels)
            }
            target_levels = assign_levels(mu[:, k], edges)
            lower, upper = interval_estimate(
                mu[:, k], eta[:, :, k], target_levels, pools, cfg.alpha, cfg.max_pool_size, rng
            )
            if borrowed:
                logger.warning("error_levels_borrowed", species=species, levels=sorted(set(borrowed)))
            result.uncertainty[species] = SpeciesUncertainty(
                estimate, edges, target_levels, pools, sorted(set(borrowed)), lower, upper
            )
            logger.info(
                "uncertainty_estimated",
                species=species,
                gamma=gamma,
                weight_regular=estimate.weight_regular,
                weight_site=estimate.weight_site,
            )
        return result


# --------------------------------------------------------------- outputs
def summary_frame(result: EnsembleResult) -> pd.DataFrame:
    """Ensemble summary keyed by (site_id, week)."""
    frame = result.dataset.frame[["site_id", "week", "no2_ppb", "nox_ppb"]].copy()
    for k, species in enumerate(SPECIES):
        unc = result.uncertainty[species]
        abs_eta = np.mean(np.abs(result.variance[:, :, k]), axis=0)
        bias_level = np.array([np.mean(np.abs(unc.pools[int(level)])) for level in unc.levels])
        denom = abs_eta + bias_level
        frame[f"mu_{species}"] = result.mean[:, k]
        frame[f"lower_{species}"] = unc.lower
        frame[f"upper_{species}"] = unc.upper
        frame[f"level_{species}"] = unc.levels
        frame[f"level_borrowed_{species}"] = np.isin(unc.levels, unc.borrowed_levels)
        frame[f"variance_share_{species}"] = np.divide(abs_eta, denom, out=np.zeros_like(denom), where=denom > 0)
    return frame


def coverage(result: EnsembleResult, split: Optional[str] = SplitTag.SITE_TEST.value) -> Dict[str, float]:
    """
    Share of observations inside their interval, per species.

    With ``split`` given, only observations that carried that tag in some
    member run count.
    """
    observed = result.dataset.frame[["no2_ppb", "nox_ppb"]].to_numpy(dtype=np.float64)
    mask = np.ones(len(observed), dtype=bool)
    if split is not None:
        mask = np.any(np.stack([m.tags == split for m in result.members]), axis=0)
    out = {}
    for k, species in enumerate(SPECIES):
        unc = result.uncertainty[species]
        rows = mask & np.isfinite(observed[:, k])
        inside = (observed[rows, k] >= unc.lower[rows]) & (observed[rows, k] <= unc.upper[rows])
        out[species] = float(inside.mean()) if rows.any() else math.nan
    return out


def member_frame(dataset: Dataset, member: MemberRun) -> pd.DataFrame:
    frame = dataset.frame[["site_id", "week", "no2_ppb", "nox_ppb"]].copy()
    frame.insert(2, "split", member.tags)
    frame["no2_pred"] = member.predictions[:, 0]
    frame["nox_pred"] = member.predictions[:, 1]
    return frame


def write_ensemble(result: EnsembleResult, out_dir: Union[str, Path]) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    (out_dir / "predictions").mkdir(parents=True, exist_ok=True)
    paths = {}
    for member in result.members:
        path = out_dir / "predictions" / f"run_{member.plan.run_id:03d}.csv"
        member_frame(result.dataset, member).to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    paths["summary"] = out_dir / "ensemble_summary.csv"
    summary_frame(result).to_csv(paths["summary"], index=False, float_format="%.10g", lineterminator="\n")
    paths["decomposition"] = out_dir / "decomposition.csv"
    decomposition_report(result).to_csv(paths["decomposition"], index=False, float_format="%.10g", lineterminator="\n")
    paths["coverage"] = out_dir / "coverage.csv"
    pd.DataFrame([{"species": s, "coverage": c} for s, c in coverage(result).items()]).to_csv(
        paths["coverage"], index=False, float_format="%.10g", lineterminator="\n"
    )
    return paths
