"""Training loop with label-mask conditioning and best-validation selection."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import backward, no_grad, save_checkpoint
from ..model import RTran
from ..model.networks import ModelConfig
from .losses import masked_loss
from .masking import training_states
from .optim import Adam, AdamW

log = logging.getLogger(__name__)

EVAL_BATCH = 128


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-4
    optimizer: str | None = None  # "adam" | "adamw"; None picks by model kind
    weight_decay: float = 1e-2
    seed: int = 0
    mask_training: bool = True

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError(f"learning_rate must be positive and finite, got {self.learning_rate}")
        if self.optimizer not in (None, "adam", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")
    seed: int = 0


def _make_optimizer(model, cfg: TrainConfig):
    name = cfg.optimizer or ("adamw" if isinstance(model, RTran) else "adam")
    if name == "adamw":
        return AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    return Adam(model.parameters(), lr=cfg.learning_rate)


def predict_batched(model, x: np.ndarray, states: np.ndarray | None = None, batch: int = EVAL_BATCH) -> np.ndarray:
    """Forward pass over an array of normalized patches, without recording a graph."""
    outs = []
    with no_grad():
        for i in range(0, len(x), batch):
            sl = slice(i, i + batch)
            if isinstance(model, RTran):
                outs.append(model(x[sl], states[sl]).value)
            else:
                outs.append(model(x[sl]).value)
    return np.concatenate(outs) if outs else np.zeros((0, model.config.n_species), dtype=np.float32)


def _val_loss_and_mse(model, x, y, m, states) -> tuple[float, float]:
    pred = predict_batched(model, x, states).astype(np.float64)
    p = np.clip(pred, 1e-7, 1 - 1e-7)
    ce = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    total = m.sum()
    return float((ce * m).sum() / total), float((((pred - y) ** 2) * m).sum() / total)


def train(model, dataset, config: TrainConfig, out_dir=None) -> TrainResult:
    """Fit ``model`` on the train split and restore the best-validation weights.

    Training samples are ordered by hotspot id before seeded shuffling, so the
    run depends only on the data, the config and the seed.
    """
    cfg = config
    if dataset.norm_stats is None:
        raise ValueError("dataset normalization stats are not fitted")
    if model.config.n_species != len(dataset.catalog):
        raise ValueError(f"model predicts {model.config.n_species} species, dataset has {len(dataset.catalog)}")
    is_rtran = isinstance(model, RTran)
    rng = np.random.default_rng(cfg.seed)
    ids = [h.id for h in dataset.hotspots]
    train_idx = sorted(dataset.split_indices("train"), key=lambda i: ids[i])
    val_idx = sorted(dataset.split_indices("val"), key=lambda i: ids[i])
    if len(train_idx) < cfg.batch_size:
        raise ValueError(f"train split has {len(train_idx)} samples, fewer than one batch of {cfg.batch_size}")
    train_idx, val_idx = np.array(train_idx), np.array(val_idx)
    dtype = model.dtype
    x_train = dataset.normalized_patches(train_idx).astype(dtype)
    y_train = dataset.rates[train_idx].astype(np.float64)
    m_train = dataset.available[train_idx]
    x_val = dataset.normalized_patches(val_idx).astype(dtype) if len(val_idx) else None
    y_val = dataset.rates[val_idx].astype(np.float64)
    m_val = dataset.available[val_idx]
    # fixed validation masks so epochs are comparable
    val_states = training_states(y_val, m_val, np.random.default_rng([cfg.seed, 1])) if is_rtran else None

    opt = _make_optimizer(model, cfg)
    result = TrainResult(seed=cfg.seed)
    best_state = model.state_dict()
    n_batches = len(train_idx) // cfg.batch_size  # last partial batch dropped
    for epoch in range(cfg.epochs):
        perm = rng.permutation(len(train_idx))
        losses = []
        for b in range(n_batches):
            sel = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            yb, mb = y_train[sel], m_train[sel]
            if is_rtran:
                if cfg.mask_training:
                    states = training_states(yb, mb, rng)
                else:
                    states = np.full(yb.shape, -1.0)
                pred = model(x_train[sel], states)
            else:
                pred = model(x_train[sel])
            loss = masked_loss(pred, yb, mb)
            lv = float(loss.value)
            if not np.isfinite(lv):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.step(backward(loss))
            losses.append(lv)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if x_val is not None and len(val_idx):
            vl, vm = _val_loss_and_mse(model, x_val, y_val, m_val, val_states)
            if not np.isfinite(vl):
                raise NumericalError(f"non-finite validation loss at epoch {epoch}")
            entry.update(val_loss=vl, val_mse=vm)
            if vm < result.best_val_mse:
                result.best_val_mse, result.best_epoch = vm, epoch
                best_state = model.state_dict()
        else:
            result.best_epoch = epoch
            best_state = model.state_dict()
        result.history.append(entry)
        log.info("epoch %d %s", epoch, entry)
    model.load_state_dict(best_state)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(out / "model.ckpt", model, train_config=cfg, dataset=dataset)
        history = {
            "seed": cfg.seed,
            "config": cfg.to_dict(),
            "model": model.config.to_dict(),
            "best_epoch": result.best_epoch,
            "best_val_mse": result.best_val_mse,
            "epochs": result.history,
        }
        (out / "history.json").write_text(json.dumps(history, indent=1) + "\n")
    return result


def save_model(path, model, train_config: TrainConfig | None = None, dataset=None) -> None:
    """Write weights plus everything ``complete`` needs to run on a raw patch.

    With a dataset, the catalog, normalization stats and content hash are
    embedded in the checkpoint config.
    """
    config = {"model": model.config.to_dict()}
    if train_config is not None:
        config["train"] = train_config.to_dict()
    if dataset is not None:
        config["dataset_hash"] = dataset.content_hash()
        config["catalog"] = dataset.catalog.to_json()
        if dataset.norm_stats is not None:
            config["norm_stats"] = dataset.norm_stats.to_json()
    save_checkpoint(path, model.state_dict(), config)


def load_model(path, dtype=np.float32):
    """Rebuild a model from a checkpoint; returns (model, checkpoint config)."""
    from ..autodiff import load_checkpoint
    from ..model import build_model

    arrays, config = load_checkpoint(path)
    model = build_model(ModelConfig.from_dict(config["model"]), dtype=dtype)
    model.load_state_dict(arrays)
    return model, config
