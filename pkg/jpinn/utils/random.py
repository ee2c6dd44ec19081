"""Seed derivation shared by every stochastic step."""

import numpy as np


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit child seed of a sequence of nonnegative integer keys."""
    return int(np.random.SeedSequence([abs(int(k)) for k in keys]).generate_state(1)[0])


def make_rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))
