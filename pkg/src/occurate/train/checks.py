"""End-to-end gradient check on a tiny R-Tran."""

from __future__ import annotations

import numpy as np

from ..autodiff import FDResult, fd_compare
from ..model import ModelConfig, build_model
from .losses import masked_loss
from .masking import training_states

TOLERANCE = 1e-4


def tiny_rtran_gradcheck(seed: int = 0, n_coords: int = 256, eps: float = 1e-5) -> FDResult:
    """Float64 finite-difference check of the masked loss through every layer.

    Uses 6 species, a 4x16x16 patch, d_model 16 and one encoder layer.
    """
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        kind="rtran", n_species=6, in_channels=4, widths=(8, 8, 16, 16), groups=4,
        d_model=16, layers=1, heads=2, d_ff=32, seed=seed,
    )
    model = build_model(cfg, dtype=np.float64)
    x = rng.standard_normal((3, 4, 16, 16))
    y = rng.uniform(size=(3, 6))
    avail = rng.uniform(size=(3, 6)) < 0.8
    avail[:, 0] = True
    states = training_states(y, avail, rng)
    params = model.parameters()

    def loss(_ps):
        return masked_loss(model(x, states), y, avail)

    return fd_compare(loss, params, eps=eps, n_coords=n_coords, seed=seed)
