"""Synthetic two-group benchmark with tunable image signal and cross-group coupling.

Each sample draws a latent vector ``z = (z_a, z_b)``. Group A rates depend
on ``z_a`` only; group B mixes a function of A's logits with its own latent
``z_b``::

    logit_A = W_A z_a + b_A
    logit_B = coupling * W_BA logit_A + (1 - coupling) * W_B z_b + noise * eta

Every latent component is painted into the patch as a Gaussian bump of
amplitude ``z_j`` at a random position, on top of white pixel noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .catalog import SpeciesCatalog
from .dataset import Dataset
from .geo import Hotspot

GROUP_A = "A"
GROUP_B = "B"


@dataclass
class SynthConfig:
    n_samples: int = 2000
    n_species_A: int = 24
    n_species_B: int = 16
    coupling: float = 0.8
    noise: float = 0.05
    patch_shape: tuple = (8, 32, 32)
    seed: int = 0
    latent_A: int = 6
    latent_B: int = 4
    image_noise: float = 0.5
    bump_sigma: float = 3.0
    logit_scale: float = 1.5

    def __post_init__(self):
        self.patch_shape = tuple(int(s) for s in self.patch_shape)
        counts = (self.n_samples, self.n_species_A, self.n_species_B, self.latent_A, self.latent_B)
        if min(counts) <= 0:
            raise ValueError("sample, species and latent counts must be positive")
        if not 0.0 <= self.coupling <= 1.0:
            raise ValueError("coupling must lie in [0, 1]")
        if self.noise < 0 or self.image_noise < 0:
            raise ValueError("noise levels must be non-negative")
        if len(self.patch_shape) != 3 or min(self.patch_shape) <= 0:
            raise ValueError(f"degenerate patch shape {self.patch_shape}")
        if self.n_samples < 3:
            raise ValueError("need at least 3 samples for train/val/test")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_shape"] = list(self.patch_shape)
        return d


@dataclass
class SynthTruth:
    """Generator internals, kept for oracle checks."""

    z: np.ndarray
    logit_A: np.ndarray
    logit_B: np.ndarray
    W_A: np.ndarray
    b_A: np.ndarray
    W_BA: np.ndarray
    W_B: np.ndarray
    eta: np.ndarray


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def paint(z: np.ndarray, shape: tuple, rng: np.random.Generator, sigma: float, image_noise: float) -> np.ndarray:
    """Render latents as Gaussian bumps, component j in channel j mod C."""
    n, k = z.shape
    c, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    margin_y, margin_x = min(h / 4, 2 * sigma), min(w / 4, 2 * sigma)
    cy = rng.uniform(margin_y, h - 1 - margin_y, size=(n, k))
    cx = rng.uniform(margin_x, w - 1 - margin_x, size=(n, k))
    out = image_noise * rng.standard_normal((n, c, h, w))
    for j in range(k):
        bump = np.exp(
            -((yy[None] - cy[:, j, None, None]) ** 2 + (xx[None] - cx[:, j, None, None]) ** 2) / (2 * sigma**2)
        )
        out[:, j % c] += z[:, j, None, None] * bump
    return out


def generate(config: SynthConfig, return_truth: bool = False):
    """Build a synthetic :class:`Dataset` (70/15/15 index-block splits)."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n, na, nb, ka, kb = cfg.n_samples, cfg.n_species_A, cfg.n_species_B, cfg.latent_A, cfg.latent_B

    W_A = rng.normal(0.0, cfg.logit_scale / np.sqrt(ka), size=(na, ka))
    b_A = rng.normal(-0.5, 0.5, size=na)
    W_BA = rng.normal(0.0, 1.0 / np.sqrt(na), size=(nb, na))
    W_B = rng.normal(0.0, cfg.logit_scale / np.sqrt(kb), size=(nb, kb))

    z = rng.standard_normal((n, ka + kb))
    eta = rng.standard_normal((n, nb))
    logit_A = z[:, :ka] @ W_A.T + b_A
    logit_B = (
        cfg.coupling * (logit_A @ W_BA.T)
        + (1.0 - cfg.coupling) * (z[:, ka:] @ W_B.T)
        + cfg.noise * eta
    )
    rates = np.concatenate([_sigmoid(logit_A), _sigmoid(logit_B)], axis=1)
    patches = paint(z, cfg.patch_shape, rng, cfg.bump_sigma, cfg.image_noise).astype(np.float32)

    names = [f"a{i:03d}" for i in range(na)] + [f"b{i:03d}" for i in range(nb)]
    catalog = SpeciesCatalog.from_names(names, [GROUP_A] * na + [GROUP_B] * nb)

    n_train, n_val = int(round(0.7 * n)), int(round(0.15 * n))
    lat = rng.uniform(25.0, 49.0, size=n)
    lon = rng.uniform(-124.0, -67.0, size=n)
    hotspots = []
    for i in range(n):
        split = "train" if i < n_train else "val" if i < n_train + n_val else "test"
        hotspots.append(Hotspot(f"s{i:05d}", round(float(lat[i]), 6), round(float(lon[i]), 6), split))

    channels = [f"latent{c}" for c in range(cfg.patch_shape[0])]
    ds = Dataset(
        catalog=catalog,
        hotspots=hotspots,
        patches=patches,
        rates=rates.astype(np.float32),
        available=np.ones_like(rates, dtype=bool),
        channel_names=channels,
        config={"source": "synth", **cfg.to_dict()},
    )
    ds.fit_norm()
    if return_truth:
        return ds, SynthTruth(z, logit_A, logit_B, W_A, b_A, W_BA, W_B, eta)
    return ds
