"""Conditioning states for species tokens."""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np

UNKNOWN = -1.0
ABSENT = 0.0
# row order of the state-embedding table
STATE_VALUES = (UNKNOWN, ABSENT, 0.25, 0.5, 0.75, 1.0)
_STATE_ARR = np.array(STATE_VALUES)


def quantize_state(known: bool, rate: float | None = None) -> float:
    """Map a species' observation status to one of the six state values.

    Positive rates round *up* to the next quarter, so any observed presence
    yields a state of at least 0.25.
    """
    if not known:
        return UNKNOWN
    if rate is None or not (0.0 <= rate <= 1.0) or math.isnan(rate):
        raise ValueError(f"rate must lie in [0, 1], got {rate!r}")
    if rate == 0.0:
        return ABSENT
    return float(math.ceil(rate * 4) / 4)


def quantize_rates(rates: np.ndarray, known: np.ndarray) -> np.ndarray:
    """Vectorized :func:`quantize_state` over arrays of any matching shape."""
    rates = np.asarray(rates, dtype=np.float64)
    known = np.asarray(known, dtype=bool)
    kr = rates[known]
    if kr.size and (np.any(kr < 0) | np.any(kr > 1) | np.any(np.isnan(kr))):
        raise ValueError("known rates must lie in [0, 1]")
    q = np.ceil(np.clip(rates, 0.0, 1.0) * 4) / 4
    out = np.where(known, q, UNKNOWN)
    return out


def state_index(states: np.ndarray) -> np.ndarray:
    """Row indices into the state-embedding table; rejects values outside the six states."""
    states = np.asarray(states, dtype=np.float64)
    idx = np.clip(np.searchsorted(_STATE_ARR, states), 0, len(_STATE_ARR) - 1)
    bad = _STATE_ARR[idx] != states
    if bad.any():
        raise ValueError(f"invalid state value {states[bad][0]!r}; expected one of {STATE_VALUES}")
    return idx


def states_from_partial(known: Mapping[str, float | bool], catalog) -> np.ndarray:
    """Build a full state vector from partial knowledge keyed by species name.

    Booleans are presence/absence flags (True -> 1.0, False -> 0); numbers
    are encounter rates quantized by :func:`quantize_state`. Every species not
    mentioned is unknown.
    """
    states = np.full(len(catalog), UNKNOWN)
    for name, val in known.items():
        i = catalog.index_of(name)
        if isinstance(val, (bool, np.bool_)):
            states[i] = 1.0 if val else ABSENT
        else:
            states[i] = quantize_state(True, float(val))
    return states
