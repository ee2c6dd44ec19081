"""
Training service.

Semi-supervised mini-batch training of a physics-informed model: the
physics terms see every row of the concatenated batch, the supervised
terms only its leading training rows.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from jpinn.autodiff import grad, relu
from jpinn.config import BaseNetworkSettings, RunConfig, TrainConfig
from jpinn.exceptions import ConfigurationError, NumericFailureError
from jpinn.models.optim import AdamState, adam_step
from jpinn.models.pinn import CompositeModel, Model, PinnModel
from jpinn.physics.residuals import (
    N_TERMS,
    ORDERING_TERM,
    SPECIES,
    LossBreakdown,
    Theta,
    input_derivatives,
    ordering_residual,
    pde_residual,
    pde_term,
    supervised_residual,
    supervised_term,
    threshold_term,
    total_loss,
)
from jpinn.schemas.records import SplitTag
from jpinn.services.dataset_service import Dataset, FeatureBatch, Standardizer, model_inputs
from jpinn.utils.logging import get_logger
from jpinn.utils.random import derive_seed, make_rng

logger = get_logger(__name__)

Mode = Literal["joint", "separate", "baseline-no-physics", "no-elevation-pde"]
MODES: Tuple[str, ...] = ("joint", "separate", "baseline-no-physics", "no-elevation-pde")
EVAL_SPLITS = (("train", SplitTag.TRAIN), ("regular", SplitTag.REGULAR_TEST), ("site", SplitTag.SITE_TEST))


# ---------------------------------------------------------------- metrics
@dataclass(frozen=True)
class SpeciesMetrics:
    """R^2 and RMSE in ppb; ``r2_defined`` is false when R^2 is a sentinel."""

    r2: float
    rmse: float
    n: int
    r2_defined: bool = True


def metrics(
    observed: np.ndarray, predicted: np.ndarray, species: Sequence[str] = SPECIES
) -> Dict[str, SpeciesMetrics]:
    """
    R^2 and RMSE per species column, skipping missing observations.

    R^2 is NaN with ``r2_defined=False`` when fewer than two observations
    remain or the observations have zero variance.
    """
    observed = np.asarray(observed, dtype=np.float64).reshape(len(observed), -1)
    predicted = np.asarray(predicted, dtype=np.float64).reshape(len(predicted), -1)
    if observed.shape != predicted.shape or observed.shape[1] != len(species):
        raise ConfigurationError(
            "Observed and predicted arrays are not aligned",
            details={"observed": list(observed.shape), "predicted": list(predicted.shape)},
        )
    out: Dict[str, SpeciesMetrics] = {}
    for k, name in enumerate(species):
        present = np.isfinite(observed[:, k])
        obs, pred = observed[present, k], predicted[present, k]
        n = int(present.sum())
        if n == 0:
            out[name] = SpeciesMetrics(math.nan, math.nan, 0, False)
            continue
        residual = obs - pred
        rmse = float(np.sqrt(np.mean(residual**2)))
        ss_tot = float(np.sum((obs - obs.mean()) ** 2))
        if n < 2 or ss_tot == 0.0:
            out[name] = SpeciesMetrics(math.nan, rmse, n, False)
        else:
            out[name] = SpeciesMetrics(1.0 - float(np.sum(residual**2)) / ss_tot, rmse, n)
    return out


# ---------------------------------------------------------------- history
@dataclass
class EpochRecord:
    epoch: int
    loss: float
    terms: List[float]
    scores: Dict[str, Dict[str, SpeciesMetrics]] = field(default_factory=dict)


@dataclass
class TrainHistory:
    """Per-epoch loss, mean squared residual terms and split metrics."""

    records: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def term(self, index: int) -> np.ndarray:
        """Series of mean e_index^2 over epochs (index 1..7)."""
        return np.array([r.terms[index - 1] for r in self.records])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.records:
            row: Dict[str, Union[int, float]] = {"epoch": r.epoch, "loss": r.loss}
            row.update({f"e{i}": r.terms[i - 1] for i in range(1, N_TERMS + 1)})
            for split, _ in EVAL_SPLITS:
                for sp in SPECIES:
                    m = r.scores.get(split, {}).get(sp)
                    row[f"r2_{split}_{sp}"] = m.r2 if m else math.nan
                    row[f"rmse_{split}_{sp}"] = m.rmse if m else math.nan
            rows.append(row)
        return pd.DataFrame(rows)


# ------------------------------------------------------------------- data
@dataclass
class TrainingData:
    """Row partitions of one tagged dataset; ``train`` includes oversampled duplicates."""

    train: FeatureBatch
    regular: FeatureBatch
    site: FeatureBatch
    predict: FeatureBatch
    train_unique: FeatureBatch

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "TrainingData":
        train_rows = dataset.rows(SplitTag.TRAIN)
        extra = np.asarray(dataset.oversample_index, dtype=np.int64)
        return cls(
            train=dataset.batch(np.concatenate([train_rows, extra])),
            regular=dataset.batch(dataset.rows(SplitTag.REGULAR_TEST)),
            site=dataset.batch(dataset.rows(SplitTag.SITE_TEST)),
            predict=dataset.batch(dataset.rows(SplitTag.PREDICT)),
            train_unique=dataset.batch(train_rows),
        )

    def split(self, name: str) -> FeatureBatch:
        return {"train": self.train_unique, "regular": self.regular, "site": self.site}[name]


def apply_mode(config: TrainConfig, mode: str) -> TrainConfig:
    """Training configuration adjusted for a model variant."""
    if mode not in MODES:
        raise ConfigurationError(f"Unknown mode '{mode}'", details={"modes": list(MODES)})
    if mode == "baseline-no-physics":
        lambdas = [0.0] * 5 + list(config.lambdas[5:])
        logger.info("physics_terms_disabled", mode=mode, lambdas=lambdas)
        return config.model_copy(update={"lambdas": lambdas})
    if mode == "no-elevation-pde":
        logger.info("elevation_terms_disabled", mode=mode)
        return config.model_copy(update={"use_elevation": False})
    return config


def prepare_model(
    data: TrainingData,
    species: Sequence[str],
    covariates: Sequence[str],
    config: TrainConfig,
    network: Optional[BaseNetworkSettings],
    seed: int,
) -> PinnModel:
    """Build a model and fit its input scaling, elevation range and thresholds on training rows."""
    train = data.train_unique
    if len(train) == 0:
        raise ConfigurationError("No training rows to fit input scaling on")
    model = PinnModel(
        species, covariates, seed, network=network, log_floor=config.log_floor_ppb, use_elevation=config.use_elevation
    )
    scaler = Standardizer.fit(model_inputs(train))
    model.fit_inputs(scaler.mean, scaler.scale)
    model.set_z_range(float(train.coords[:, 3].min()), float(train.coords[:, 3].max()))

    thresholds = {}
    for s in model.species:
        column = train.observed[:, SPECIES.index(s)]
        if not np.any(np.isfinite(column)):
            raise ConfigurationError(f"No training observations for {s}")
        thresholds[s] = math.log(config.threshold_factor * float(np.nanmax(column)) + config.log_floor_ppb)
    model.set_thresholds(thresholds)
    return model


# ---------------------------------------------------------------- trainer
class JointTrainer:
    """Mini-batch Adam over the weighted residual loss of one model."""

    def __init__(self, model: PinnModel, config: TrainConfig, seed: int):
        self.model = model
        self.config = config
        self.seed = seed
        self.state = AdamState()

    def loss_terms(self, batch: FeatureBatch, n_train: int) -> LossBreakdown:
        """Residual terms of a batch whose first ``n_train`` rows are training rows."""
        model, cfg = self.model, self.config
        lambdas = list(cfg.lambdas)
        t, x, y, z = model.leaves(batch.coords)
        inputs = model.inputs([t, x, y, z], batch.covariates)
        y_hat = model.estimation(inputs)

        need_pde = cfg.diagnose_inactive_terms or any(lambdas[pde_term(s) - 1] > 0 for s in model.species)
        theta_out = model.parameter(inputs) if need_pde else None
        observed_log = batch.observed_log(model.log_floor)[:n_train]

        residuals = {}
        for k, s in enumerate(model.species):
            y_k = y_hat[:, k : k + 1]
            if theta_out is not None:
                derivs = input_derivatives(y_k, t, x, y, z, model.use_elevation)
                residuals[pde_term(s)] = pde_residual(Theta.from_output(theta_out, k), derivs, model.use_elevation)
            residuals[threshold_term(s)] = relu(y_k - model.thresholds[s])
            if n_train:
                residuals[supervised_term(s)] = supervised_residual(
                    observed_log[:, SPECIES.index(s)], y_k[:n_train]
                )
        if len(model.species) == 2:
            residuals[ORDERING_TERM] = ordering_residual(y_hat[:, 0:1], y_hat[:, 1:2])
        return total_loss(residuals, lambdas, len(batch), n_train)

    def step(self, batch: FeatureBatch, n_train: int) -> LossBreakdown:
        """Evaluate the loss, then apply one clipped Adam update."""
        breakdown = self.loss_terms(batch, n_train)
        params = self.model.parameters()
        if breakdown.active:
            grads = [g.data for g in grad(breakdown.loss, params)]
        else:
            grads = [np.zeros_like(p.data) for p in params]
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericFailureError("Non-finite gradient")
        new_values, self.state = adam_step([p.data for p in params], grads, self.state, self.config)
        self.model.set_parameters(new_values)
        return breakdown

    def _physics_partitions(self, data: TrainingData) -> List[FeatureBatch]:
        if self.config.physics_sample_policy == "train+regular-only":
            if len(data.regular) == 0:
                raise ConfigurationError("Policy train+regular-only requires regular-test rows")
            return [data.regular]
        return [p for p in (data.regular, data.site, data.predict) if len(p)]

    def evaluate(self, data: TrainingData) -> Dict[str, Dict[str, SpeciesMetrics]]:
        columns = [SPECIES.index(s) for s in self.model.species]
        scores = {}
        for name, _ in EVAL_SPLITS:
            part = data.split(name)
            if len(part) == 0:
                continue
            predicted = self.model.predict_ppb(part.coords, part.covariates, self.config.eval_chunk)
            scores[name] = metrics(part.observed[:, columns], predicted, self.model.species)
        return scores

    def train(self, data: TrainingData) -> TrainHistory:
        """
        Run ``epochs`` passes over the training rows.

        Each epoch shuffles every partition. Mini-batch ``j`` takes the
        ``j``-th slice of the training rows and, from each physics
        partition, a proportional slice whose indices wrap around the
        partition length.

        Raises:
            ConfigurationError: Supervised terms are weighted but there are
                no training rows, or the policy needs an empty partition.
            NumericFailureError: A loss or gradient is not finite; the
                epoch and batch are attached.
        """
        cfg = self.config
        n_train = len(data.train)
        if n_train == 0 and any(cfg.lambdas[i - 1] > 0 for i in (6, 7)):
            raise ConfigurationError("Supervised terms are weighted but there are no training rows")
        physics = self._physics_partitions(data)
        n_batches = max(1, math.ceil(n_train / cfg.batch_size))
        rng = make_rng(self.seed, 7)
        history = TrainHistory()

        for epoch in range(cfg.epochs):
            order_train = rng.permutation(n_train)
            orders = [rng.permutation(len(p)) for p in physics]
            total, terms = 0.0, np.zeros(N_TERMS)
            for j in range(n_batches):
                train_idx = order_train[j * cfg.batch_size : (j + 1) * cfg.batch_size]
                parts = [data.train.take(train_idx)]
                for p, order in zip(physics, orders):
                    size = math.ceil(len(p) / n_batches)
                    parts.append(p.take(order[np.arange(j * size, (j + 1) * size) % len(p)]))
                batch = FeatureBatch.concat(parts)
                try:
                    breakdown = self.step(batch, len(train_idx))
                    value = float(breakdown.loss.data)
                    if not math.isfinite(value):
                        raise NumericFailureError("Non-finite loss")
                except NumericFailureError as e:
                    raise NumericFailureError(
                        e.message, node=e.node, sample=e.sample, epoch=epoch, batch=j, details=e.details
                    ) from e
                total += value
                terms += np.array(breakdown.term_vector())
                logger.debug("batch_completed", epoch=epoch, batch=j, loss=value)

            record = EpochRecord(epoch, total / n_batches, (terms / n_batches).tolist(), self.evaluate(data))
            history.records.append(record)
            logger.info("epoch_completed", epoch=epoch, loss=record.loss)
        return history


# ------------------------------------------------------------ orchestration
@dataclass
class TrainResult:
    model: Model
    histories: Dict[str, TrainHistory]

    def history_frame(self) -> pd.DataFrame:
        frames = []
        for name, history in self.histories.items():
            frame = history.to_frame()
            frame.insert(0, "model", name)
            frames.append(frame)
        return pd.concat(frames, ignore_index=True)

    def write_history(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.history_frame().to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
        return path


def train_model(dataset: Dataset, settings: RunConfig, mode: str = "joint", seed: Optional[int] = None) -> TrainResult:
    """
    Train one model variant on a tagged dataset.

    ``separate`` trains one single-species model per species; every other
    mode trains a joint model.
    """
    seed = settings.seed if seed is None else seed
    config = apply_mode(settings.training, mode)
    data = TrainingData.from_dataset(dataset)
    groups = [(s,) for s in SPECIES] if mode == "separate" else [SPECIES]

    members, histories = [], {}
    for position, species in enumerate(groups):
        member_seed = derive_seed(seed, position)
        model = prepare_model(data, species, dataset.covariates, config, settings.network, member_seed)
        name = species[0] if mode == "separate" else "joint"
        logger.info("training_started", model=name, mode=mode, train_rows=len(data.train), epochs=config.epochs)
        histories[name] = JointTrainer(model, config, member_seed).train(data)
        members.append(model)
    final: Model = CompositeModel(members) if mode == "separate" else members[0]
    return TrainResult(model=final, histories=histories)
