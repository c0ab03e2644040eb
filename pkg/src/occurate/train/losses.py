"""Soft-label cross entropy and its availability-masked form."""

from __future__ import annotations

import numpy as np

from ..autodiff import Node, ops

PRED_CLAMP = 1e-7


def _check(pred: Node, target: np.ndarray, op: str) -> None:
    if pred.shape != np.shape(target):
        raise ValueError(f"{op}: prediction shape {pred.shape} != target shape {np.shape(target)}")


def elementwise_ce(pred: Node, target) -> Node:
    """-y log p - (1 - y) log(1 - p) per entry, with p clamped away from {0, 1}."""
    target = np.asarray(target, dtype=pred.dtype)
    _check(pred, target, "ce")
    p = ops.clip(pred, PRED_CLAMP, 1.0 - PRED_CLAMP)
    return -(target * ops.log(p) + (1.0 - target) * ops.log(1.0 - p))


def ce_loss(pred: Node, target, reduction: str = "mean") -> Node:
    """Cross entropy between predicted and target encounter rates.

    ``reduction="mean"`` averages over every (sample, species) entry, which is
    what :func:`masked_loss` reduces to under an all-ones mask.
    ``reduction="sum_species"`` sums over species and averages over samples.
    """
    terms = elementwise_ce(pred, target)
    if reduction == "mean":
        return ops.div(ops.sum(terms), float(terms.value.size))
    if reduction == "sum_species":
        per_sample = ops.sum(terms, axis=-1) if terms.ndim > 1 else ops.sum(terms)
        return ops.mean(per_sample)
    raise ValueError(f"unknown reduction {reduction!r}")


def masked_loss(pred: Node, target, mask) -> Node:
    """sum(M * L) / sum(M) over every entry of the batch."""
    mask = np.asarray(mask, dtype=pred.dtype)
    _check(pred, mask, "masked_loss")
    total = float(mask.sum())
    if total <= 0:
        raise ValueError("empty mask")
    return ops.div(ops.sum(elementwise_ce(pred, target) * mask), total)
