"""
Pipeline service.

Runs the command-level steps (simulate, train, ensemble, evaluate,
importance, compare) against one output directory and writes the resolved
configuration next to every set of outputs.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from jpinn.config import RunConfig
from jpinn.exceptions import ConfigurationError, DataValidationError
from jpinn.models.snapshot import load_snapshot, save_snapshot
from jpinn.schemas.records import SplitTag
from jpinn.services.dataset_service import Dataset, apply_split_plan, load_and_validate, write_dataset
from jpinn.services.ensemble_service import (
    EnsembleService,
    MemberRun,
    coverage,
    member_frame,
    site_split_plan,
    write_ensemble,
)
from jpinn.services.importance_service import rank_importance
from jpinn.services.simulation_service import load_scenario, simulate_dataset
from jpinn.services.training_service import MODES, metrics, train_model
from jpinn.utils.logging import LogContext, get_logger, log_function_call

logger = get_logger(__name__)

DEFAULT_SCENARIO = "plume-small"
CSV_OPTIONS = {"index": False, "float_format": "%.10g", "lineterminator": "\n"}
SPLIT_COLUMNS = (("train", SplitTag.TRAIN), ("regular", SplitTag.REGULAR_TEST), ("site", SplitTag.SITE_TEST))


def prediction_metrics(frames: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    """
    R^2/RMSE per run, split and species from prediction tables, followed by
    the median over runs.
    """
    rows = []
    for run, frame in frames.items():
        for split, tag in SPLIT_COLUMNS:
            part = frame[frame["split"] == tag.value]
            if part.empty:
                continue
            observed = part[["no2_ppb", "nox_ppb"]].to_numpy(dtype=np.float64)
            predicted = part[["no2_pred", "nox_pred"]].to_numpy(dtype=np.float64)
            for species, m in metrics(observed, predicted).items():
                rows.append(
                    {
                        "run": run,
                        "split": split,
                        "species": species,
                        "n": m.n,
                        "r2": m.r2,
                        "rmse": m.rmse,
                        "r2_defined": m.r2_defined,
                    }
                )
    table = pd.DataFrame(rows, columns=["run", "split", "species", "n", "r2", "rmse", "r2_defined"])
    if len(frames) > 1 and not table.empty:
        median = table.groupby(["split", "species"], sort=False)[["n", "r2", "rmse"]].median().reset_index()
        median.insert(0, "run", "median")
        median["r2_defined"] = median["r2"].notna()
        table = pd.concat([table, median[table.columns]], ignore_index=True)
    return table


def ordering_share(frames: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Share of predictions with NO2 <= NOx, per run."""
    rows = [
        {"run": run, "ordered_share": float(np.mean(frame["no2_pred"].to_numpy() <= frame["nox_pred"].to_numpy()))}
        for run, frame in frames.items()
    ]
    return pd.DataFrame(rows, columns=["run", "ordered_share"])


class PipelineService:
    """Command-level steps over one output directory."""

    def __init__(self, settings: RunConfig, out_dir: Union[str, Path]):
        self.settings = settings
        self.out_dir = Path(out_dir)

    def get_pipeline_steps(self) -> List[Dict[str, str]]:
        """Steps chained by :meth:`reproduce`."""
        return [
            {"name": "simulate", "description": "Simulate the scenario and sample a dataset"},
            {"name": "train", "description": "Train one model on a single site split"},
            {"name": "ensemble", "description": "Train bootstrap members and estimate intervals"},
            {"name": "evaluate", "description": "Tabulate R^2/RMSE per split and species"},
            {"name": "importance", "description": "Rank covariates by permutation importance"},
        ]

    def _prepare(self, sub: Optional[str] = None) -> Path:
        target = self.out_dir / sub if sub else self.out_dir
        target.mkdir(parents=True, exist_ok=True)
        self.settings.dump(target)
        return target

    @staticmethod
    def _check_mode(mode: str) -> None:
        if mode not in MODES:
            raise ConfigurationError(f"Unknown mode '{mode}'", details={"modes": list(MODES)})

    # ------------------------------------------------------------ steps
    @log_function_call
    def simulate(self, scenario: Optional[str] = None, out_name: str = "data.csv") -> Path:
        spec = load_scenario(scenario or self.settings.scenario or DEFAULT_SCENARIO)
        target = self._prepare()
        dataset = simulate_dataset(spec, self.settings.seed)
        return write_dataset(dataset, target / out_name)

    @log_function_call
    def train(self, data: Union[str, Path, Dataset], mode: str = "joint", sub: Optional[str] = None) -> Path:
        self._check_mode(mode)
        dataset = data if isinstance(data, Dataset) else load_and_validate(data)
        target = self._prepare(sub)
        fraction = self.settings.split.site_train_fraction
        plan = site_split_plan(dataset.monitored_site_ids, 0, self.settings.seed, fraction)
        with LogContext(run_id=plan.run_id, mode=mode):
            tagged = apply_split_plan(dataset, plan, self.settings.split)
            result = train_model(tagged, self.settings, mode, seed=plan.seed)
        batch = tagged.batch()
        predictions = result.model.predict_ppb(batch.coords, batch.covariates, self.settings.training.eval_chunk)
        member = MemberRun(plan, tagged.frame["split"].to_numpy(), predictions, result.histories)

        result.write_history(target / "training_log.csv")
        save_snapshot(result.model, target / "model.snapshot")
        write_dataset(tagged, target / "tagged_data.csv")
        (target / "predictions").mkdir(exist_ok=True)
        frame = member_frame(tagged, member)
        frame.to_csv(target / "predictions" / "run_000.csv", **CSV_OPTIONS)
        prediction_metrics({"run_000": frame}).to_csv(target / "metrics.csv", **CSV_OPTIONS)
        return target

    @log_function_call
    def ensemble(self, data: Union[str, Path, Dataset], mode: str = "joint", jobs: Optional[int] = None) -> Path:
        self._check_mode(mode)
        dataset = data if isinstance(data, Dataset) else load_and_validate(data)
        target = self._prepare()
        result = EnsembleService(self.settings, mode, jobs).run(dataset)
        write_ensemble(result, target)
        logger.info("ensemble_written", out=str(target), coverage=coverage(result))
        return target

    @log_function_call
    def evaluate(self, run_dir: Union[str, Path]) -> pd.DataFrame:
        """Metrics tables for the prediction files of a train or ensemble output."""
        run_dir = Path(run_dir)
        files = sorted((run_dir / "predictions").glob("*.csv"))
        if not files:
            raise DataValidationError(f"No prediction files under {run_dir / 'predictions'}")
        frames = {f.stem: pd.read_csv(f, dtype={"site_id": str}, keep_default_na=True) for f in files}
        for name, frame in frames.items():
            missing = {"split", "no2_ppb", "nox_ppb", "no2_pred", "nox_pred"} - set(frame.columns)
            if missing:
                raise DataValidationError(f"Prediction file {name} lacks columns", details={"missing": sorted(missing)})
        target = self._prepare()
        table = prediction_metrics(frames)
        table.to_csv(target / "evaluation.csv", **CSV_OPTIONS)
        ordering_share(frames).to_csv(target / "ordering.csv", **CSV_OPTIONS)
        decomposition = run_dir / "decomposition.csv"
        if decomposition.exists():
            report = pd.read_csv(decomposition)
            if decomposition.resolve() != (target / "decomposition.csv").resolve():
                report.to_csv(target / "decomposition.csv", **CSV_OPTIONS)
            for row in report.itertuples():
                logger.info("decomposition", species=row.species, variance_share=row.variance_share)
        return table

    @log_function_call
    def importance(self, model_path: Union[str, Path], data: Union[str, Path, Dataset], repeats: int = 5) -> Path:
        model = load_snapshot(model_path)
        dataset = data if isinstance(data, Dataset) else load_and_validate(data)
        if list(model.covariates) != dataset.covariates:
            raise DataValidationError(
                "Dataset covariates do not match the model",
                details={"model": list(model.covariates), "data": dataset.covariates},
            )
        target = self._prepare()
        path = target / "importance.csv"
        rank_importance(model, dataset, repeats, self.settings.seed).to_csv(path, **CSV_OPTIONS)
        return path

    @log_function_call
    def compare(self, data: Union[str, Path, Dataset], modes: Sequence[str], seeds: Sequence[int]) -> pd.DataFrame:
        """Site-test metrics of several modes over several seeds, with medians."""
        for mode in modes:
            self._check_mode(mode)
        dataset = data if isinstance(data, Dataset) else load_and_validate(data)
        target = self._prepare()
        rows = []
        for seed in seeds:
            local = self.settings.model_copy(update={"seed": seed})
            plan = site_split_plan(dataset.monitored_site_ids, 0, seed, local.split.site_train_fraction)
            tagged = apply_split_plan(dataset, plan, local.split)
            site_rows = tagged.rows(SplitTag.SITE_TEST)
            site = tagged.batch(site_rows)
            for mode in modes:
                with LogContext(seed=seed, mode=mode):
                    result = train_model(tagged, local, mode, seed=plan.seed)
                predicted = result.model.predict_ppb(site.coords, site.covariates, local.training.eval_chunk)
                for species, m in metrics(site.observed, predicted).items():
                    rows.append({"mode": mode, "seed": seed, "species": species, "r2": m.r2, "rmse": m.rmse})
        table = pd.DataFrame(rows, columns=["mode", "seed", "species", "r2", "rmse"])
        table.to_csv(target / "comparison.csv", **CSV_OPTIONS)

        summary = table.groupby(["mode", "species"], sort=False)[["r2", "rmse"]].median().reset_index()
        if "baseline-no-physics" in modes:
            base = summary[summary["mode"] == "baseline-no-physics"].set_index("species")["rmse"]
            summary["rmse_reduction_vs_baseline"] = [
                1.0 - r.rmse / base[r.species] if base[r.species] > 0 else np.nan for r in summary.itertuples()
            ]
        summary.to_csv(target / "comparison_summary.csv", **CSV_OPTIONS)
        return summary

    @log_function_call
    def reproduce(self, scenario: Optional[str] = None, jobs: Optional[int] = None) -> Path:
        """Simulate, train, run the ensemble, evaluate and rank importance in one go."""
        data_path = self.simulate(scenario)
        dataset = load_and_validate(data_path)
        train_dir = self.train(dataset, "joint", sub="train")
        ensemble = PipelineService(self.settings, self.out_dir / "ensemble")
        ensemble.ensemble(dataset, "joint", jobs)
        ensemble.evaluate(ensemble.out_dir)
        PipelineService(self.settings, train_dir).importance(
            train_dir / "model.snapshot", load_and_validate(train_dir / "tagged_data.csv")
        )
        return self.out_dir

