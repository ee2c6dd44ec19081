"""Networks, the physics-informed model, its optimizer and snapshots."""

from .networks import FullResidualNet, build_estimation_net, build_parameter_net
from .optim import AdamState, adam_step, clip_by_global_norm
from .pinn import CompositeModel, PinnModel

__all__ = [
    "AdamState",
    "CompositeModel",
    "FullResidualNet",
    "PinnModel",
    "adam_step",
    "build_estimation_net",
    "build_parameter_net",
    "clip_by_global_norm",
]
