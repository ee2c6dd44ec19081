"""Adam with global-norm gradient clipping."""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from jpinn.config import TrainConfig


@dataclass
class AdamState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return [np.array(g, copy=True) for g in grads], norm


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> Tuple[List[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update after clipping the global gradient norm.

    Returns the updated parameter arrays and the new state; inputs are not
    modified.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads must have the same length")
    clipped, _ = clip_by_global_norm(grads, config.clip_norm)
    beta1, beta2 = config.effective_beta1, config.beta2
    step = state.step + 1
    m_prev = state.m or [np.zeros_like(p) for p in params]
    v_prev = state.v or [np.zeros_like(p) for p in params]

    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, clipped, m_prev, v_prev):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        new_params.append(p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(step=step, m=new_m, v=new_v)
