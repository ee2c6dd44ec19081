"""
Physics-informed model: an estimation network and a parameter network
sharing one input layout ``[t, x, y, z, covariates...]``.

A :class:`PinnModel` covers one or both species. Separate-species runs
pair two single-species models in a :class:`CompositeModel`; both expose
the same prediction interface.
"""

from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from jpinn.autodiff import Tensor, concat, no_grad
from jpinn.config import BaseNetworkSettings
from jpinn.exceptions import ConfigurationError
from jpinn.models.networks import FullResidualNet, build_estimation_net, build_parameter_net
from jpinn.physics.residuals import SPECIES, THETA_FIELDS
from jpinn.utils.random import derive_seed

N_COORDS = 4


class PinnModel:
    """Estimation and parameter networks for the given species."""

    def __init__(
        self,
        species: Sequence[str],
        covariates: Sequence[str],
        seed: int,
        network: Optional[BaseNetworkSettings] = None,
        log_floor: float = 0.01,
        use_elevation: bool = True,
        build: bool = True,
    ):
        unknown = [s for s in species if s not in SPECIES]
        if not species or unknown:
            raise ConfigurationError("Unknown species", details={"species": list(species)})
        self.species: Tuple[str, ...] = tuple(s for s in SPECIES if s in species)
        self.covariates: List[str] = list(covariates)
        self.seed = seed
        self.log_floor = log_floor
        self.use_elevation = use_elevation
        self.thresholds: Dict[str, float] = {}
        self.z_range: Tuple[float, float] = (-np.inf, np.inf)
        self.estimation: FullResidualNet
        self.parameter: FullResidualNet
        if build:
            width = N_COORDS + len(self.covariates)
            k = len(self.species)
            self.estimation = build_estimation_net(width, derive_seed(seed, 1), network, output_width=k)
            self.parameter = build_parameter_net(
                width, derive_seed(seed, 2), network, output_width=len(THETA_FIELDS) * k
            )

    @property
    def input_width(self) -> int:
        return N_COORDS + len(self.covariates)

    def nets(self) -> Dict[str, FullResidualNet]:
        return {"estimation": self.estimation, "parameter": self.parameter}

    def parameters(self) -> List[Tensor]:
        return self.estimation.parameters() + self.parameter.parameters()

    def set_parameters(self, values: Sequence[np.ndarray]) -> None:
        tensors = self.parameters()
        if len(values) != len(tensors):
            raise ConfigurationError("Parameter count mismatch")
        for tensor, value in zip(tensors, values):
            tensor.data = np.asarray(value, dtype=np.float64)

    def fit_inputs(self, shift: Sequence[float], scale: Sequence[float]) -> None:
        """Install the training-row standardization into both networks."""
        for net in self.nets().values():
            net.set_input_scaling(shift, scale)

    def set_z_range(self, low: float, high: float) -> None:
        if not low <= high:
            raise ConfigurationError("Elevation range must satisfy low <= high")
        self.z_range = (float(low), float(high))

    def set_thresholds(self, thresholds: Dict[str, float]) -> None:
        missing = [s for s in self.species if s not in thresholds]
        if missing:
            raise ConfigurationError("Missing thresholds", details={"species": missing})
        self.thresholds = {s: float(thresholds[s]) for s in self.species}

    def clip_coords(self, coords: np.ndarray) -> np.ndarray:
        """Copy of ``(n, 4)`` coordinates with z clamped to the training range."""
        coords = np.array(coords, dtype=np.float64, copy=True)
        coords[:, 3] = np.clip(coords[:, 3], *self.z_range)
        return coords

    def leaves(self, coords: np.ndarray) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
        """Differentiable ``(n, 1)`` leaves for t, x, y and z."""
        coords = self.clip_coords(coords)
        return tuple(  # type: ignore[return-value]
            Tensor(coords[:, i : i + 1], requires_grad=True, name=name) for i, name in enumerate("txyz")
        )

    def inputs(self, leaves: Sequence[Tensor], covariates: np.ndarray) -> Tensor:
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.ndim != 2 or covariates.shape[1] != len(self.covariates):
            raise ConfigurationError(
                "Covariate matrix does not match the model",
                details={"expected": len(self.covariates), "shape": list(covariates.shape)},
            )
        return concat(list(leaves) + [Tensor(covariates)], axis=1)

    def predict_log(self, coords: np.ndarray, covariates: np.ndarray, chunk: int = 2048) -> np.ndarray:
        """Log-concentration predictions, ``(n, len(species))``, without recording."""
        n = len(coords)
        out = np.empty((n, len(self.species)))
        coords = self.clip_coords(coords)
        with no_grad():
            for start in range(0, n, chunk):
                stop = min(start + chunk, n)
                columns = [Tensor(coords[start:stop, i : i + 1]) for i in range(N_COORDS)]
                inp = self.inputs(columns, covariates[start:stop])
                out[start:stop] = self.estimation(inp).data
        return out

    def predict_theta(self, coords: np.ndarray, covariates: np.ndarray) -> np.ndarray:
        """Parameter-net outputs, ``(n, 7 * len(species))``."""
        coords = self.clip_coords(coords)
        with no_grad():
            inp = self.inputs([Tensor(coords[:, i : i + 1]) for i in range(N_COORDS)], covariates)
            return self.parameter(inp).data

    def predict_ppb(self, coords: np.ndarray, covariates: np.ndarray, chunk: int = 2048) -> np.ndarray:
        """Back-transformed concentrations ``exp(y) - delta``, floored at zero."""
        return np.maximum(np.exp(self.predict_log(coords, covariates, chunk)) - self.log_floor, 0.0)


class CompositeModel:
    """Single-species models evaluated side by side."""

    def __init__(self, members: Sequence[PinnModel]):
        species = [s for m in members for s in m.species]
        if len(set(species)) != len(species):
            raise ConfigurationError("Composite members must cover distinct species")
        self.members = sorted(members, key=lambda m: SPECIES.index(m.species[0]))
        self.species: Tuple[str, ...] = tuple(s for m in self.members for s in m.species)

    @property
    def covariates(self) -> List[str]:
        return self.members[0].covariates

    def predict_log(self, coords: np.ndarray, covariates: np.ndarray, chunk: int = 2048) -> np.ndarray:
        return np.concatenate([m.predict_log(coords, covariates, chunk) for m in self.members], axis=1)

    def predict_ppb(self, coords: np.ndarray, covariates: np.ndarray, chunk: int = 2048) -> np.ndarray:
        return np.concatenate([m.predict_ppb(coords, covariates, chunk) for m in self.members], axis=1)


Model = Union[PinnModel, CompositeModel]


def model_members(model: Model) -> List[PinnModel]:
    return list(model.members) if isinstance(model, CompositeModel) else [model]
