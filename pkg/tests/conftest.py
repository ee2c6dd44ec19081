"""
Shared fixtures for the jPINN test suite.

Datasets are generated directly from a seeded generator so tests do not
depend on the simulator, and settings use tiny networks so that training
runs finish in seconds.
"""

import math
from typing import List

import numpy as np
import pytest

from jpinn.config import create_settings
from jpinn.schemas.records import SampleRecord, SplitTag
from jpinn.services.dataset_service import Dataset, from_records

COVARIATES = ["met_vx", "emi_source", "ter_elev", "dst_1"]


def make_dataset(n_sites: int = 12, n_weeks: int = 8, seed: int = 0, n_predict_sites: int = 0) -> Dataset:
    """Weekly records whose concentrations depend smoothly on the emission covariate."""
    rng = np.random.default_rng(seed)
    records: List[SampleRecord] = []
    for s in range(n_sites + n_predict_sites):
        x, y = rng.uniform(0.0, 10.0, size=2)
        z = float(rng.uniform(0.0, 2.0))
        source = float(rng.uniform(0.5, 3.0))
        for week in range(n_weeks):
            covariates = {
                "met_vx": float(rng.normal(0.5, 0.1)),
                "emi_source": source * (1.0 + 0.3 * math.sin(2 * math.pi * week / 52)),
                "ter_elev": z + float(rng.normal(0.0, 0.05)),
                "dst_1": float(rng.normal()),
            }
            monitored = s < n_sites
            nox = 4.0 + 6.0 * covariates["emi_source"] + 0.2 * x if monitored else None
            no2 = 0.55 * nox if monitored else None
            records.append(
                SampleRecord(
                    site_id=f"S{s:03d}",
                    week=week,
                    x=float(x),
                    y=float(y),
                    z=z,
                    no2_ppb=no2,
                    nox_ppb=nox,
                    split=SplitTag.TRAIN if monitored else SplitTag.PREDICT,
                    covariates=covariates,
                )
            )
    return from_records(records, COVARIATES)


@pytest.fixture
def dataset() -> Dataset:
    """Twelve monitored sites over eight weeks."""
    return make_dataset()


@pytest.fixture
def tiny_settings():
    """Desk profile shrunk to toy networks and two epochs."""
    return create_settings(
        "desk",
        seed=3,
        network={"estimation_widths": [6, 4], "parameter_widths": [6, 4]},
        training={"batch_size": 32, "epochs": 2},
        ensemble={"members": 2, "levels": 4},
    )
