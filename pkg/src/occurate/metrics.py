"""Regression and ranking metrics, group masking and multi-seed aggregation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

SCALE = 100.0  # MAE/MSE are reported in units of 1e-2


def _group_cols(n: int, group) -> np.ndarray:
    if group is None:
        return np.arange(n)
    g = np.asarray(group)
    cols = np.flatnonzero(g) if g.dtype == bool else g.astype(np.int64)
    if cols.size == 0:
        raise ValueError("empty group")
    return cols


def _masked_entries(preds, targets, group, available):
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    cols = _group_cols(preds.shape[1], group)
    p, t = preds[:, cols], targets[:, cols]
    if available is not None:
        m = np.atleast_2d(np.asarray(available, dtype=bool))[:, cols]
        p, t = p[m], t[m]
    if p.size == 0:
        raise ValueError("empty group")
    return p, t


def mae(preds, targets, group=None, available=None) -> float:
    p, t = _masked_entries(preds, targets, group, available)
    return float(np.mean(np.abs(p - t)))


def mse(preds, targets, group=None, available=None) -> float:
    p, t = _masked_entries(preds, targets, group, available)
    return float(np.mean((p - t) ** 2))


def top_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values; ties go to the lower index."""
    values = np.asarray(values)
    order = np.lexsort((np.arange(len(values)), -values))
    return order[:k]


def top_k(pred, target, k: int) -> float:
    """Percentage overlap between the top-k predicted and top-k observed species."""
    if k <= 0:
        raise ValueError("k must be positive")
    pred, target = np.asarray(pred), np.asarray(target)
    k = min(k, len(pred))
    hit = np.intersect1d(top_indices(pred, k), top_indices(target, k)).size
    return 100.0 * hit / k


def top_k_batch(preds, targets, k: int, group=None) -> float:
    preds, targets = np.atleast_2d(preds), np.atleast_2d(targets)
    cols = _group_cols(preds.shape[1], group)
    return float(np.mean([top_k(p[cols], t[cols], k) for p, t in zip(preds, targets)]))


def adaptive_top_k(preds, targets, group=None, return_skipped: bool = False):
    """Mean top-k with k = number of non-zero targets of each sample (within the group).

    Samples without any non-zero target are skipped; their count is logged
    and returned when ``return_skipped`` is set.
    """
    preds, targets = np.atleast_2d(preds), np.atleast_2d(targets)
    cols = _group_cols(preds.shape[1], group)
    scores = []
    skipped = 0
    for p, t in zip(preds[:, cols], targets[:, cols]):
        k = int(np.count_nonzero(t > 0))
        if k == 0:
            skipped += 1
            continue
        scores.append(top_k(p, t, k))
    if skipped:
        log.info("adaptive_top_k: skipped %d samples with no non-zero targets", skipped)
    value = float(np.mean(scores)) if scores else float("nan")
    return (value, skipped) if return_skipped else value


@dataclass
class MetricsReport:
    mae: float
    mse: float
    top10: float
    top30: float
    topk: float
    group: str
    n_samples: int
    seeds: list = field(default_factory=list)
    std: dict = field(default_factory=dict)
    dataset_hash: str = ""
    model: str = ""
    method: str = ""
    known_group: str | None = None
    skipped_topk: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "MetricsReport":
        return cls(**d)


METRIC_KEYS = ("mae", "mse", "top10", "top30", "topk")


def evaluate(preds, targets, available, group_cols, group: str, **meta) -> MetricsReport:
    """Group-masked metrics; MAE/MSE scaled by 100, top-k scores in percent."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    available = np.asarray(available, dtype=bool)
    cols = _group_cols(preds.shape[1], group_cols)
    rows = available[:, cols].any(axis=1)
    p, t, a = preds[rows], targets[rows], available[rows]
    topk, skipped = adaptive_top_k(p, t, cols, return_skipped=True)
    return MetricsReport(
        mae=SCALE * mae(p, t, cols, a),
        mse=SCALE * mse(p, t, cols, a),
        top10=top_k_batch(p, t, 10, cols),
        top30=top_k_batch(p, t, 30, cols),
        topk=topk,
        group=group,
        n_samples=int(rows.sum()),
        skipped_topk=skipped,
        **meta,
    )


def aggregate_seeds(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Mean and population std of each metric across per-seed reports."""
    if not reports:
        raise ValueError("no reports to aggregate")
    first = reports[0]
    for r in reports[1:]:
        if r.group != first.group:
            raise ValueError(f"mixed groups: {first.group!r} and {r.group!r}")
        if r.dataset_hash != first.dataset_hash:
            raise ValueError("reports come from different datasets")
    vals = {k: np.array([getattr(r, k) for r in reports], dtype=np.float64) for k in METRIC_KEYS}
    seeds = [s for r in reports for s in r.seeds]
    return MetricsReport(
        **{k: float(v.mean()) for k, v in vals.items()},
        group=first.group,
        n_samples=first.n_samples,
        seeds=seeds,
        std={k: float(v.std()) for k, v in vals.items()},
        dataset_hash=first.dataset_hash,
        model=first.model,
        method=first.method,
        known_group=first.known_group,
        skipped_topk=first.skipped_topk,
    )


def row_label(r: MetricsReport) -> str:
    name = {"rtran": "R-Tran", "baseline": "Baseline"}.get(r.model, r.model or "model")
    if r.method == "feedbackprop":
        name = "Feedback-prop"
    if r.known_group:
        name += f" ({r.group} | {r.known_group})"
    return name


def render_table(reports: Sequence[MetricsReport]) -> str:
    """Markdown table grouped by evaluated species group."""
    lines = [
        "| Model | MAE[1e-2] | MSE[1e-2] | Top-10 % | Top-30 % | Top-k % |",
        "|---|---|---|---|---|---|",
    ]
    groups = list(dict.fromkeys(r.group for r in reports))
    for g in groups:
        lines.append(f"| **Evaluation on {g}** | | | | | |")
        for r in (r for r in reports if r.group == g):
            def pct(k):
                s = r.std.get(k)
                return f"{getattr(r, k):.2f} ± {s:.2f}" if s is not None else f"{getattr(r, k):.2f}"

            label = row_label(r).replace("|", "\\|")
            lines.append(f"| {label} | {r.mae:.2f} | {r.mse:.2f} | {pct('top10')} | {pct('top30')} | {pct('topk')} |")
    return "\n".join(lines) + "\n"


def save_reports(path, reports: Sequence[MetricsReport], **extra) -> None:
    payload = {"reports": [r.to_json() for r in reports], **extra}
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_reports(path) -> list[MetricsReport]:
    data = json.loads(Path(path).read_text())
    items = data["reports"] if isinstance(data, dict) and "reports" in data else data
    return [MetricsReport.from_json(d) for d in items]
