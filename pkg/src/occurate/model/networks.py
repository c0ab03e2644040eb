"""R-Tran and the plain convolutional baseline."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..autodiff import Node, ops
from .layers import Conv2d, Embedding, EncoderLayer, GroupNorm, LayerNorm, Linear, Module, ResidualBlock
from .states import STATE_VALUES, state_index


@dataclass
class ModelConfig:
    kind: str = "rtran"  # "rtran" | "baseline"
    n_species: int = 40
    in_channels: int = 30
    widths: tuple = (16, 32, 64, 128)
    stem_stride: int = 2
    groups: int = 8
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    d_ff: int = 128
    feature_tokens: int = 1  # 1 (global pool) or 4 (spatial quadrants)
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(self.widths)
        if self.kind not in ("rtran", "baseline"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.feature_tokens not in (1, 4):
            raise ValueError("feature_tokens must be 1 or 4")
        if self.n_species < 1 or self.in_channels < 1:
            raise ValueError("n_species and in_channels must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _as_batch(patch, channels: int, dtype) -> Node:
    if isinstance(patch, Node):
        x = patch
    else:
        arr = np.asarray(patch)
        if arr.ndim == 3:
            arr = arr[None]
        x = Node(arr.astype(dtype, copy=False))
    if x.ndim != 4:
        raise ValueError(f"expected patch of shape (C, H, W) or (N, C, H, W), got {x.shape}")
    if x.shape[1] != channels:
        raise ValueError(f"patch has {x.shape[1]} channels, model expects {channels}")
    return x


class Backbone(Module):
    """Residual conv stages with group norm, ending in mean pooling."""

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        w0 = cfg.widths[0]
        self.in_channels = cfg.in_channels
        self.stem = Conv2d(cfg.in_channels, w0, 3, rng, stride=cfg.stem_stride, dtype=dtype)
        self.stem_norm = GroupNorm(w0, cfg.groups, dtype)
        blocks = []
        c_prev = w0
        for i, w in enumerate(cfg.widths):
            blocks.append(ResidualBlock(c_prev, w, 1 if i == 0 else 2, cfg.groups, rng, dtype))
            c_prev = w
        self.blocks = blocks
        self.out_dim = c_prev

    def feature_map(self, x: Node) -> Node:
        x = ops.relu(self.stem_norm(self.stem(x)))
        for block in self.blocks:
            x = block(x)
        return x

    def __call__(self, x: Node, grid: int = 1) -> Node:
        return ops.mean_pool(self.feature_map(x), grid=grid)


class RTran(Module):
    """Backbone feature token(s) plus one token per species, mixed by a transformer.

    Species token i is ``T[i] + S[state_i]``; there is no positional encoding,
    so the network is equivariant to relabelling species.
    """

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        rng = np.random.default_rng(cfg.seed)
        self.config = cfg
        self.backbone = Backbone(cfg, rng, dtype)
        self.feature_proj = Linear(self.backbone.out_dim, cfg.d_model, rng, dtype)
        self.target_embeddings = Embedding(cfg.n_species, cfg.d_model, rng, dtype=dtype)
        self.state_embeddings = Embedding(len(STATE_VALUES), cfg.d_model, rng, dtype=dtype)
        self.encoder = [EncoderLayer(cfg.d_model, cfg.heads, cfg.d_ff, rng, dtype) for _ in range(cfg.layers)]
        self.final_norm = LayerNorm(cfg.d_model, dtype)
        self.head = Linear(cfg.d_model, 1, rng, dtype)
        self._rename()

    def features(self, patch) -> Node:
        x = _as_batch(patch, self.config.in_channels, self.dtype)
        grid = 1 if self.config.feature_tokens == 1 else 2
        return self.backbone(x, grid=grid)

    def __call__(self, patch, states) -> Node:
        cfg = self.config
        x = _as_batch(patch, cfg.in_channels, self.dtype)
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[None]
        if states.shape != (x.shape[0], cfg.n_species):
            raise ValueError(f"states shape {states.shape} does not match (batch, n_species) = {(x.shape[0], cfg.n_species)}")
        b, n, d = x.shape[0], cfg.n_species, cfg.d_model
        feats = self.feature_proj(self.features(x))
        if cfg.feature_tokens == 1:
            feats = ops.reshape(feats, (b, 1, d))
        species = ops.reshape(self.target_embeddings.table, (1, n, d)) + self.state_embeddings(state_index(states))
        h = ops.concat([feats, species], axis=1)
        for layer in self.encoder:
            h = layer(h)
        h = self.final_norm(h[:, cfg.feature_tokens :, :])
        logits = ops.reshape(self.head(h), (b, n))
        return ops.sigmoid(logits)


class Baseline(Module):
    """Backbone followed by a linear n-way head."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        rng = np.random.default_rng(cfg.seed)
        self.config = cfg
        self.backbone = Backbone(cfg, rng, dtype)
        self.head = Linear(self.backbone.out_dim, cfg.n_species, rng, dtype)
        self._rename()

    def features(self, patch) -> Node:
        return self.backbone(_as_batch(patch, self.config.in_channels, self.dtype))

    def __call__(self, patch, states=None) -> Node:
        return ops.sigmoid(self.head(self.features(patch)))


def build_model(cfg: ModelConfig, dtype=np.float32) -> Module:
    return RTran(cfg, dtype) if cfg.kind == "rtran" else Baseline(cfg, dtype)


def backbone_forward(model, patch) -> np.ndarray:
    """Pooled backbone feature vector(s) for a patch or batch."""
    out = model.backbone(_as_batch(patch, model.config.in_channels, model.dtype)).value
    return out[0] if np.ndim(patch) == 3 else out


def rtran_forward(model: RTran, patch, states) -> np.ndarray:
    if not isinstance(model, RTran):
        raise TypeError("rtran_forward needs an R-Tran model")
    out = model(patch, states).value
    return out[0] if np.ndim(patch) == 3 else out


def baseline_forward(model: Baseline, patch) -> np.ndarray:
    if not isinstance(model, Baseline):
        raise TypeError("baseline_forward needs a baseline model")
    out = model(patch).value
    return out[0] if np.ndim(patch) == 3 else out


def export_embeddings(model: RTran, catalog) -> list[dict]:
    """Target-embedding rows labelled by species, for external visualization."""
    table = model.target_embeddings.table.value
    return [
        {"id": e.species_id, "name": e.name, "group": e.group, "embedding": table[e.species_id].tolist()}
        for e in catalog.entries
    ]
