"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .node import Node, Parameter, backward

# relative errors are taken against max(|analytic|, |numeric|, REL_FLOOR) so that
# near-zero gradients are compared absolutely
REL_FLOOR = 1e-6


@dataclass
class FDResult:
    max_rel_error: float
    n_coords: int
    worst: tuple[str, int] | None
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def fd_compare(
    f: Callable[[Sequence[Parameter]], Node],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    n_coords: int = 256,
    seed: int = 0,
) -> FDResult:
    """Compare backward() against central differences on sampled coordinates.

    ``f`` must rebuild the graph from the current parameter values on each call.
    At least ``n_coords`` coordinates are checked (all of them if fewer exist).
    """
    params = list(params)
    grads = backward(f(params), params)
    sizes = [p.value.size for p in params]
    total = int(np.sum(sizes))
    rng = np.random.default_rng(seed)
    flat = np.arange(total) if total <= n_coords else np.sort(rng.choice(total, n_coords, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    analytic = np.empty(len(flat))
    numeric = np.empty(len(flat))
    where: list[tuple[str, int]] = []
    for k, gi in enumerate(flat):
        pi = int(np.searchsorted(offsets, gi, side="right") - 1)
        p = params[pi]
        local = int(gi - offsets[pi])
        view = p.value.reshape(-1)
        orig = view[local]
        view[local] = orig + eps
        f_plus = float(f(params).value)
        view[local] = orig - eps
        f_minus = float(f(params).value)
        view[local] = orig
        numeric[k] = (f_plus - f_minus) / (2 * eps)
        analytic[k] = grads[p.name].reshape(-1)[local]
        where.append((p.name, local))

    rel = relative_error(analytic, numeric)
    worst = where[int(np.argmax(rel))] if len(rel) else None
    return FDResult(float(rel.max()) if len(rel) else 0.0, len(flat), worst, analytic, numeric)


def fd_check(
    f: Callable[[Sequence[Parameter]], Node],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    n_coords: int = 256,
    seed: int = 0,
) -> float:
    """Maximum relative error between analytic and central-difference gradients."""
    return fd_compare(f, params, eps=eps, n_coords=n_coords, seed=seed).max_rel_error
