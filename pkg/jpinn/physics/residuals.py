"""
Residuals of the joint loss.

Term indices follow the species order ``(no2, nox)``:

* 1, 2 - advection-diffusion residual of each species (log space)
* 3, 4 - upper-threshold exceedance of each species
* 5 - ordering violation ``y_no2 > y_nox``
* 6, 7 - supervised error of each species on training rows

Terms 1-5 are averaged over every row of the batch, terms 6-7 over the
training rows only.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from jpinn.autodiff import Tensor, grad, relu
from jpinn.exceptions import ConfigurationError, NumericFailureError

SPECIES = ("no2", "nox")
THETA_FIELDS = ("v_x", "v_y", "v_z", "p_x", "p_y", "p_z", "rho")
N_TERMS = 7
PHYSICS_TERMS = (1, 2, 3, 4, 5)
SUPERVISED_TERMS = (6, 7)


def pde_term(species: str) -> int:
    return 1 + SPECIES.index(species)


def threshold_term(species: str) -> int:
    return 3 + SPECIES.index(species)


def supervised_term(species: str) -> int:
    return 6 + SPECIES.index(species)


ORDERING_TERM = 5


@dataclass
class Theta:
    """Per-sample PDE coefficients of one species, each ``(n, 1)``."""

    v_x: Tensor
    v_y: Tensor
    v_z: Tensor
    p_x: Tensor
    p_y: Tensor
    p_z: Tensor
    rho: Tensor

    @classmethod
    def from_output(cls, output: Tensor, species_position: int) -> "Theta":
        """Slice the seven columns of one species from a parameter-net output."""
        base = len(THETA_FIELDS) * species_position
        if output.shape[1] < base + len(THETA_FIELDS):
            raise ConfigurationError(
                "Parameter output too narrow for species",
                details={"width": output.shape[1], "species_position": species_position},
            )
        columns = {name: output[:, base + i : base + i + 1] for i, name in enumerate(THETA_FIELDS)}
        return cls(**columns)


@dataclass
class PdeDerivatives:
    """First and second input derivatives of one log-concentration output."""

    d_t: Tensor
    d_x: Tensor
    d_y: Tensor
    d_z: Tensor
    d_xx: Tensor
    d_yy: Tensor
    d_zz: Tensor


def _check_finite(name: str, value: Tensor) -> None:
    bad = ~np.isfinite(value.data.ravel())
    if np.any(bad):
        raise NumericFailureError(
            f"Non-finite derivative {name}", node=value.describe(), sample=int(np.flatnonzero(bad)[0])
        )


def input_derivatives(
    y: Tensor, t: Tensor, x: Tensor, yy: Tensor, z: Tensor, use_elevation: bool = True
) -> PdeDerivatives:
    """
    Derivatives of a ``(n, 1)`` output with respect to the coordinate leaves.

    Rows do not interact, so the gradient of ``y.sum()`` gives per-row
    derivatives. Second derivatives are taken by differentiating the
    recorded first derivatives again.
    """
    coords = [t, x, yy, z] if use_elevation else [t, x, yy]
    first = grad(y, coords, create_graph=True)
    d_t, d_x, d_y = first[0], first[1], first[2]
    (d_xx,) = grad(d_x, [x], create_graph=True)
    (d_yy,) = grad(d_y, [yy], create_graph=True)
    if use_elevation:
        d_z = first[3]
        (d_zz,) = grad(d_z, [z], create_graph=True)
    else:
        d_z = d_zz = Tensor(np.zeros_like(y.data))
    derivs = PdeDerivatives(d_t, d_x, d_y, d_z, d_xx, d_yy, d_zz)
    for name in ("d_t", "d_x", "d_y", "d_z", "d_xx", "d_yy", "d_zz"):
        _check_finite(name, getattr(derivs, name))
    return derivs


def pde_residual(theta: Theta, d: PdeDerivatives, use_elevation: bool = True) -> Tensor:
    """
    Advection-diffusion residual of ``y = log(C + delta)``.

    ``y_t + v.grad(y) - sum_a p_a (y_aa + y_a^2) - rho`` with the
    z-terms dropped when ``use_elevation`` is false.
    """
    e = (
        d.d_t
        + theta.v_x * d.d_x
        + theta.v_y * d.d_y
        - theta.p_x * (d.d_xx + d.d_x * d.d_x)
        - theta.p_y * (d.d_yy + d.d_y * d.d_y)
        - theta.rho
    )
    if use_elevation:
        e = e + theta.v_z * d.d_z - theta.p_z * (d.d_zz + d.d_z * d.d_z)
    return e


def threshold_residuals(y_no2: Tensor, y_nox: Tensor, max_no2: float, max_nox: float) -> Tuple[Tensor, Tensor]:
    return relu(y_no2 - max_no2), relu(y_nox - max_nox)


def ordering_residual(y_no2: Tensor, y_nox: Tensor) -> Tensor:
    return relu(y_no2 - y_nox)


def supervised_residual(observed: np.ndarray, predicted: Tensor) -> Tensor:
    """
    ``observed - predicted`` over rows with an observation.

    Args:
        observed: ``(m,)`` log observations, NaN where missing.
        predicted: ``(m, 1)`` predictions for the same rows.
    """
    observed = np.asarray(observed, dtype=np.float64).ravel()
    present = np.flatnonzero(np.isfinite(observed))
    return Tensor(observed[present].reshape(-1, 1)) - predicted[present]


@dataclass
class LossBreakdown:
    """Total loss with the mean square of every evaluated term."""

    loss: Tensor
    term_means: Dict[int, float] = field(default_factory=dict)
    active: List[int] = field(default_factory=list)

    def term_vector(self) -> List[float]:
        """Mean squares of e1..e7; terms that were not evaluated read 0."""
        return [self.term_means.get(i, 0.0) for i in range(1, N_TERMS + 1)]


def total_loss(
    residuals: Mapping[int, Tensor],
    lambdas: Sequence[float],
    n_all: int,
    n_train: int,
) -> LossBreakdown:
    """
    Weighted sum of mean squared residuals.

    Args:
        residuals: Per-row residuals keyed by term index 1..7.
        lambdas: Seven nonnegative weights.
        n_all: Rows in the batch (denominator of terms 1-5).
        n_train: Training rows in the batch. Terms 6-7 average over the
            rows of their residual, which holds only observed values.

    Raises:
        ConfigurationError: A supervised term is weighted but there are no
            training rows, or ``lambdas`` is malformed.
    """
    if len(lambdas) != N_TERMS or any(w < 0 for w in lambdas):
        raise ConfigurationError("lambdas must hold exactly 7 nonnegative weights")
    if n_train == 0 and any(lambdas[i - 1] > 0 for i in SUPERVISED_TERMS if i in residuals):
        raise ConfigurationError("Supervised terms are weighted but the batch holds no training rows")

    loss: Optional[Tensor] = None
    breakdown = LossBreakdown(loss=Tensor(0.0))
    for index in sorted(residuals):
        e = residuals[index]
        count = n_all if index in PHYSICS_TERMS else e.data.shape[0]
        if count == 0:
            continue
        mean_square = (e * e).sum() / float(count)
        breakdown.term_means[index] = float(mean_square.data)
        weight = float(lambdas[index - 1])
        if weight == 0.0:
            continue
        breakdown.active.append(index)
        weighted = mean_square * weight
        loss = weighted if loss is None else loss + weighted
    if loss is not None:
        breakdown.loss = loss
    return breakdown
