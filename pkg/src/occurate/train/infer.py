"""Inference with partial information: R-Tran conditioning and Feedback-prop."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..autodiff import Node, backward, ops
from ..catalog import EncounterVector
from ..model import Baseline, RTran, states_from_partial
from .losses import elementwise_ce
from .loop import EVAL_BATCH, predict_batched
from .masking import known_group_states


def _known_values(known: Mapping, catalog) -> tuple[np.ndarray, np.ndarray]:
    """(mask, values) from a name -> rate | presence-flag map."""
    mask = np.zeros(len(catalog), dtype=bool)
    vals = np.zeros(len(catalog))
    for name, val in known.items():
        i = catalog.index_of(name)
        mask[i] = True
        vals[i] = (1.0 if val else 0.0) if isinstance(val, (bool, np.bool_)) else float(val)
    return mask, vals


def predict(model: RTran, patch: np.ndarray, known: Mapping, catalog) -> EncounterVector:
    """Checklist completion for one normalized patch.

    Unknown species get model predictions; known species echo the given
    value (presence flags as 1/0) and are flagged in ``echoed``.
    """
    if not isinstance(model, RTran):
        raise TypeError("predict needs an R-Tran checkpoint; use feedback_prop for the baseline")
    states = states_from_partial(known, catalog)
    mask, vals = _known_values(known, catalog)
    pred = predict_batched(model, np.asarray(patch)[None].astype(model.dtype), states[None])[0]
    rates = np.where(mask, vals, pred.astype(np.float64))
    return EncounterVector(rates, np.ones(len(catalog), dtype=bool), echoed=mask)


@dataclass
class FeedbackResult:
    predictions: np.ndarray  # (B, n) final forward pass
    partial_loss: np.ndarray  # (iters + 1, B) known-set loss before each step and after the last
    patches: np.ndarray  # optimized inputs


def _partial_loss(pred: Node, values: np.ndarray, known: np.ndarray) -> tuple[Node, np.ndarray]:
    """Sum over samples of each sample's summed CE over its known species."""
    terms = elementwise_ce(pred, values) * known.astype(pred.dtype)
    per_sample = ops.sum(terms, axis=1)
    return ops.sum(per_sample), per_sample.value


def feedback_prop_batch(
    model: Baseline, x: np.ndarray, known: np.ndarray, values: np.ndarray, iters: int = 25, rate: float = 0.05
) -> FeedbackResult:
    """Gradient descent on the input patches against the known-species loss.

    Samples are independent (group norm uses per-sample statistics), so a
    batch gives each sample exactly its own gradient. Model parameters are
    frozen for the duration and never modified.
    """
    if not isinstance(model, Baseline):
        raise TypeError("feedback_prop needs a baseline checkpoint")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    known = np.asarray(known, dtype=bool)
    if not known.any(axis=-1).all():
        raise ValueError("empty known set")
    params = model.parameters()
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        cur = np.array(x, dtype=model.dtype, copy=True)
        trace = []
        for _ in range(iters):
            inp = Node(cur, requires_grad=True)
            pred = model(inp)
            loss, per = _partial_loss(pred, values, known)
            trace.append(per.astype(np.float64))
            backward(loss)
            cur = cur - (rate * inp.grad).astype(cur.dtype)
        pred = model(Node(cur))
        _, per = _partial_loss(pred, values, known)
        trace.append(per.astype(np.float64))
        return FeedbackResult(pred.value, np.stack(trace), cur)
    finally:
        for p, rg in zip(params, saved):
            p.requires_grad = rg


def feedback_prop(
    model: Baseline, patch: np.ndarray, known: Mapping, catalog, iters: int = 25, rate: float = 0.05
) -> EncounterVector:
    """Feedback-prop for one normalized patch given a name -> rate map."""
    if iters < 0:
        raise ValueError("iters must be non-negative")
    if not known:
        raise ValueError("empty known set")
    mask, vals = _known_values(known, catalog)
    res = feedback_prop_batch(model, np.asarray(patch)[None], mask[None], vals[None], iters, rate)
    rates = np.where(mask, vals, res.predictions[0].astype(np.float64))
    return EncounterVector(rates, np.ones(len(catalog), dtype=bool), echoed=mask)


@dataclass
class EvalOutput:
    predictions: np.ndarray
    targets: np.ndarray
    available: np.ndarray
    eval_mask: np.ndarray  # species evaluated (complement of the known group)
    partial_loss: np.ndarray | None = None


def run_eval(
    model,
    dataset,
    split: str = "test",
    known_group: str | None = None,
    method: str = "direct",
    iters: int = 25,
    rate: float = 0.05,
    batch: int = EVAL_BATCH,
    require_group: str | None = None,
) -> EvalOutput:
    """Predict a split, revealing ``known_group``'s true rates where available.

    Metrics are meant for the complement of ``known_group`` (all species when
    it is None). ``require_group`` keeps only samples where that group is
    observed; by default, samples where the evaluated and known groups are
    both observed.
    """
    cat = dataset.catalog
    idx = dataset.split_indices(split)
    gmask = cat.group_mask(known_group) if known_group else None
    eval_mask = ~gmask if gmask is not None else np.ones(len(cat), dtype=bool)
    avail = dataset.available[idx]
    keep = (avail & eval_mask).any(axis=1)
    if gmask is not None:
        keep &= (avail & gmask).any(axis=1)
    if require_group is not None:
        keep &= (avail & cat.group_mask(require_group)).any(axis=1)
    idx = idx[keep]
    x = dataset.normalized_patches(idx).astype(model.dtype)
    y = dataset.rates[idx].astype(np.float64)
    m = dataset.available[idx]
    trace = None
    if method == "direct":
        if isinstance(model, RTran):
            preds = predict_batched(model, x, known_group_states(y, m, gmask), batch)
        else:
            preds = predict_batched(model, x, None, batch)
    elif method == "feedbackprop":
        if gmask is None:
            raise ValueError("feedbackprop needs a known group")
        known = m & gmask[None, :]
        outs, traces = [], []
        for i in range(0, len(x), batch):
            sl = slice(i, i + batch)
            r = feedback_prop_batch(model, x[sl], known[sl], y[sl], iters, rate)
            outs.append(r.predictions)
            traces.append(r.partial_loss)
        preds = np.concatenate(outs)
        trace = np.concatenate(traces, axis=1)
    else:
        raise ValueError(f"unknown method {method!r}")
    return EvalOutput(preds.astype(np.float64), y, m, eval_mask, trace)
