"""On-disk dataset layout shared by built and synthetic datasets.

::

    DIR/catalog.json       species catalog [{id, name, group}]
    DIR/hotspots.csv       id,lat,lon (row order = sample order)
    DIR/splits.csv         id,split
    DIR/rates.npy          float32 (N, n) encounter rates
    DIR/available.npy      bool (N, n) availability mask
    DIR/patches/<id>.sbpx  one raw (un-normalized) patch per hotspot
    DIR/norm_stats.json    per-channel mean/std fitted on the train split
    DIR/manifest.json      ids, channels, patch shape, content hash
    DIR/config.json        the config that produced the dataset
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import SpeciesCatalog
from .geo import Hotspot, NormStats, fit_norm_stats, normalize_array, read_hotspots, read_patch, write_hotspots, write_patch


@dataclass
class Dataset:
    catalog: SpeciesCatalog
    hotspots: list  # list[Hotspot], split field set
    patches: np.ndarray  # (N, C, H, W) float32, raw
    rates: np.ndarray  # (N, n) float32
    available: np.ndarray  # (N, n) bool
    channel_names: list = field(default_factory=list)
    norm_stats: NormStats | None = None
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        n_samples, n = self.rates.shape
        if self.available.shape != self.rates.shape:
            raise ValueError("availability mask shape differs from rates")
        if len(self.hotspots) != n_samples or len(self.patches) != n_samples:
            raise ValueError("hotspots, patches and targets disagree on sample count")
        if n != len(self.catalog):
            raise ValueError(f"targets have {n} species, catalog has {len(self.catalog)}")
        finite = np.isfinite(self.patches).reshape(n_samples, -1).all(axis=1) if n_samples else np.ones(0, bool)
        if not finite.all():
            bad = self.hotspots[int(np.flatnonzero(~finite)[0])].id
            raise ValueError(f"patch for sample {bad} has non-finite values")
        empty = ~self.available.any(axis=1)
        if empty.any():
            bad = self.hotspots[int(np.flatnonzero(empty)[0])].id
            raise ValueError(f"sample {bad} has an all-false availability mask")

    def __len__(self) -> int:
        return len(self.hotspots)

    def split_indices(self, split: str) -> np.ndarray:
        return np.array([i for i, h in enumerate(self.hotspots) if h.split == split], dtype=np.int64)

    def fit_norm(self) -> NormStats:
        train = self.split_indices("train")
        if train.size == 0:
            raise ValueError("dataset has no train split")
        self.norm_stats = fit_norm_stats(list(self.patches[train]))
        self.norm_stats.channel_names = list(self.channel_names)
        return self.norm_stats

    def normalized_patches(self, idx=None) -> np.ndarray:
        if self.norm_stats is None:
            raise ValueError("normalization stats not fitted")
        x = self.patches if idx is None else self.patches[idx]
        return normalize_array(x, self.norm_stats)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.catalog.to_json(), sort_keys=True).encode())
        h.update("|".join(f"{s.id}:{s.split}" for s in self.hotspots).encode())
        h.update(np.ascontiguousarray(self.rates, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.available).tobytes())
        h.update(np.ascontiguousarray(self.patches, dtype="<f4").tobytes())
        return h.hexdigest()

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        (out / "patches").mkdir(parents=True, exist_ok=True)
        self.catalog.save(out / "catalog.json")
        write_hotspots(out / "hotspots.csv", self.hotspots)
        with open(out / "splits.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "split"])
            for h in self.hotspots:
                w.writerow([h.id, h.split])
        np.save(out / "rates.npy", self.rates.astype("<f4"))
        np.save(out / "available.npy", self.available.astype(bool))
        for h, p in zip(self.hotspots, self.patches):
            write_patch(out / "patches" / f"{h.id}.sbpx", p)
        if self.norm_stats is None:
            self.fit_norm()
        self.norm_stats.save(out / "norm_stats.json")
        manifest = {
            "hotspot_ids": [h.id for h in self.hotspots],
            "patches": [f"patches/{h.id}.sbpx" for h in self.hotspots],
            "channels": list(self.channel_names),
            "patch_shape": list(self.patches.shape[1:]),
            "n_species": len(self.catalog),
            "content_hash": self.content_hash(),
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
        (out / "config.json").write_text(json.dumps(self.config, indent=1, sort_keys=True) + "\n")
        return out

    @classmethod
    def load(cls, data_dir) -> "Dataset":
        d = Path(data_dir)
        if not (d / "manifest.json").exists():
            raise FileNotFoundError(f"{d}: no manifest.json (not a dataset directory)")
        manifest = json.loads((d / "manifest.json").read_text())
        catalog = SpeciesCatalog.load(d / "catalog.json")
        hotspots = read_hotspots(d / "hotspots.csv")
        with open(d / "splits.csv", newline="") as fh:
            split_of = {r["id"]: r["split"] for r in csv.DictReader(fh)}
        for h in hotspots:
            h.split = split_of.get(h.id, "unassigned")
        patches = np.stack([read_patch(d / rel) for rel in manifest["patches"]]) if manifest["patches"] else np.zeros((0,))
        ds = cls(
            catalog=catalog,
            hotspots=hotspots,
            patches=patches,
            rates=np.load(d / "rates.npy").astype(np.float32),
            available=np.load(d / "available.npy").astype(bool),
            channel_names=manifest.get("channels", []),
            norm_stats=NormStats.load(d / "norm_stats.json") if (d / "norm_stats.json").exists() else None,
            config=json.loads((d / "config.json").read_text()) if (d / "config.json").exists() else {},
        )
        if manifest.get("content_hash") and manifest["content_hash"] != ds.content_hash():
            raise ValueError(f"{d}: content hash mismatch (dataset files modified?)")
        return ds
