"""Random label masks for training with partial information."""

from __future__ import annotations

import math

import numpy as np

from ..model.states import UNKNOWN, quantize_rates


def sample_label_mask(n: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of *unknown* species.

    The unknown count is uniform on ceil(n/4)..n, and the unknown set is a
    uniform subset of that size.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    u = int(rng.integers(math.ceil(0.25 * n), n + 1))
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=u, replace=False)] = True
    return mask


def training_states(rates: np.ndarray, available: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-sample states for one batch: quantized truth for known, available species, -1 elsewhere."""
    b, n = rates.shape
    unknown = np.stack([sample_label_mask(n, rng) for _ in range(b)])
    known = ~unknown & available
    return np.where(known, quantize_rates(rates, known), UNKNOWN)


def known_group_states(rates: np.ndarray, available: np.ndarray, group_mask: np.ndarray | None) -> np.ndarray:
    """States revealing one group's quantized rates (where available); everything else unknown."""
    if group_mask is None:
        return np.full(rates.shape, UNKNOWN)
    known = available & group_mask[None, :]
    return np.where(known, quantize_rates(rates, known), UNKNOWN)
