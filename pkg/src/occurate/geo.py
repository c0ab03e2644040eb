"""Spatial colocation, DBSCAN splits, patch assembly and normalization."""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import ChecklistRecord, EncounterVector, SpeciesCatalog, compute_encounter_rates

log = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0
SPLITS = ("train", "val", "test")
NORM_EPS = 1e-6
PATCH_SIZE = 64

BIOCLIM_CHANNELS = [f"bio{i}" for i in range(1, 20)]
PEDOLOGIC_CHANNELS = ["bdod", "cec", "cfvo", "clay", "nitrogen", "phh2o", "sand", "silt"]
DEFAULT_CHANNELS = ["red", "green", "blue"] + BIOCLIM_CHANNELS + PEDOLOGIC_CHANNELS


def default_channel_names(n_channels: int) -> list[str]:
    """The standard 30 channel names, or ``ch0..`` for any other stack depth."""
    if n_channels == len(DEFAULT_CHANNELS):
        return list(DEFAULT_CHANNELS)
    return [f"ch{i}" for i in range(n_channels)]


@dataclass
class Hotspot:
    id: str
    lat: float
    lon: float
    split: str = "unassigned"

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0 or not -180.0 < self.lon <= 180.0:
            raise ValueError(f"hotspot {self.id}: coordinates ({self.lat}, {self.lon}) out of range")


def read_hotspots(path) -> list[Hotspot]:
    with open(path, newline="") as fh:
        return [Hotspot(r["id"], float(r["lat"]), float(r["lon"]), r.get("split") or "unassigned") for r in csv.DictReader(fh)]


def write_hotspots(path, hotspots: Sequence[Hotspot], with_split: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "lat", "lon"] + (["split"] if with_split else []))
        for h in hotspots:
            w.writerow([h.id, repr(float(h.lat)), repr(float(h.lon))] + ([h.split] if with_split else []))


# ---------------------------------------------------------------- distances


def haversine_km(p, q) -> float | np.ndarray:
    """Great-circle distance in km between (lat, lon) points given in degrees.

    Broadcasts over leading axes: ``p`` and ``q`` may be arrays of shape (..., 2).
    """
    p = np.radians(np.asarray(p, dtype=np.float64))
    q = np.radians(np.asarray(q, dtype=np.float64))
    dlat = q[..., 0] - p[..., 0]
    dlon = q[..., 1] - p[..., 1]
    a = np.sin(dlat / 2) ** 2 + np.cos(p[..., 0]) * np.cos(q[..., 0]) * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


# ---------------------------------------------------------------- colocation


@dataclass
class ColocationResult:
    vectors: "OrderedDict[str, EncounterVector]"
    assignment: list  # per observation: centroid id or None
    n_matched: int
    n_unmatched: int


def nearest_within(centroids_ll: np.ndarray, points_ll: np.ndarray, radius_km: float) -> np.ndarray:
    """Index of the nearest centroid within ``radius_km`` for each point, or -1.

    Candidates come from a haversine BallTree; distances are re-evaluated
    with :func:`haversine_km` and ties go to the smaller centroid index.
    """
    from sklearn.neighbors import BallTree

    out = np.full(len(points_ll), -1, dtype=np.int64)
    if len(centroids_ll) == 0 or len(points_ll) == 0:
        return out
    tree = BallTree(np.radians(centroids_ll), metric="haversine")
    # slight slack so boundary cases are decided by haversine_km, not the tree
    cand = tree.query_radius(np.radians(points_ll), r=radius_km * (1 + 1e-9) / EARTH_RADIUS_KM + 1e-12)
    for i, idx in enumerate(cand):
        if len(idx) == 0:
            continue
        idx = np.sort(idx)
        d = haversine_km(points_ll[i], centroids_ll[idx])
        d = np.atleast_1d(d)
        ok = d <= radius_km
        if not ok.any():
            continue
        idx, d = idx[ok], d[ok]
        out[i] = idx[np.argmin(d)]  # argmin returns the first (smallest index) on ties
    return out


def colocate(
    centroids: Sequence[Hotspot],
    observations: Sequence[ChecklistRecord],
    catalog: SpeciesCatalog,
    radius_km: float = 1.0,
    available: np.ndarray | None = None,
) -> ColocationResult:
    """Attach checklists to their nearest centroid within ``radius_km`` and aggregate.

    ``available`` marks the catalog species this observation source covers
    (default: all). Centroids with no attached checklist get an all-false
    availability mask.
    """
    if radius_km <= 0:
        raise ValueError("radius_km must be positive")
    cll = np.array([[c.lat, c.lon] for c in centroids], dtype=np.float64).reshape(-1, 2)
    pll = np.array([[o.lat, o.lon] for o in observations], dtype=np.float64).reshape(-1, 2)
    nearest = nearest_within(cll, pll, radius_km)
    grouped: OrderedDict[str, list] = OrderedDict((c.id, []) for c in centroids)
    assignment = []
    for obs, ci in zip(observations, nearest):
        if ci < 0:
            assignment.append(None)
            continue
        cid = centroids[ci].id
        assignment.append(cid)
        grouped[cid].append(ChecklistRecord(cid, obs.observed, obs.complete, obs.lat, obs.lon))
    rates = compute_encounter_rates({k: v for k, v in grouped.items() if v}, catalog, available)
    n = len(catalog)
    vectors = OrderedDict()
    for c in centroids:
        vectors[c.id] = rates.get(c.id) or EncounterVector(np.zeros(n), np.zeros(n, dtype=bool))
    n_matched = int((nearest >= 0).sum())
    if len(observations) - n_matched:
        log.info("colocate: %d of %d observations unmatched", len(observations) - n_matched, len(observations))
    return ColocationResult(vectors, assignment, n_matched, len(observations) - n_matched)


# ---------------------------------------------------------------- splits


def dbscan_clusters(lat_lon: np.ndarray, eps_km: float, min_samples: int) -> np.ndarray:
    """DBSCAN labels under the haversine metric; noise points get their own ids."""
    from sklearn.cluster import DBSCAN

    labels = DBSCAN(
        eps=eps_km / EARTH_RADIUS_KM, min_samples=min_samples, metric="haversine", algorithm="ball_tree"
    ).fit_predict(np.radians(lat_lon))
    noise = labels < 0
    if noise.any():
        labels = labels.copy()
        labels[noise] = labels.max() + 1 + np.arange(noise.sum())
    return labels


def spatial_split(
    hotspots: Sequence[Hotspot],
    eps_km: float = 5.0,
    min_samples: int = 1,
    fractions: tuple = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> list[str]:
    """Assign whole DBSCAN clusters to train/val/test.

    Clusters are visited in a seeded random order and each goes to the split
    that is currently furthest below its target share.
    Returns one split label per hotspot (also written to ``hotspot.split``).
    """
    if eps_km <= 0:
        raise ValueError("eps_km must be positive")
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or not math.isclose(fr.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    ll = np.array([[h.lat, h.lon] for h in hotspots], dtype=np.float64).reshape(-1, 2)
    labels = dbscan_clusters(ll, eps_km, min_samples)
    cluster_ids = np.unique(labels)
    if len(cluster_ids) < 3:
        raise ValueError("insufficient spatial clusters")
    sizes = np.array([(labels == c).sum() for c in cluster_ids])
    order = np.random.default_rng(seed).permutation(len(cluster_ids))
    targets = fr * len(hotspots)
    filled = np.zeros(3)
    split_of = {}
    for k in order:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(targets > 0, filled / targets, np.inf)
        s = int(np.argmin(ratio))
        split_of[cluster_ids[k]] = SPLITS[s]
        filled[s] += sizes[k]
    out = [split_of[lab] for lab in labels]
    for h, s in zip(hotspots, out):
        h.split = s
    return out


# ---------------------------------------------------------------- patches


@dataclass
class InputPatch:
    data: np.ndarray
    channel_names: list = field(default_factory=list)
    normalized: bool = False

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"patch must be (C, H, W), got shape {self.data.shape}")
        if self.channel_names and len(self.channel_names) != self.data.shape[0]:
            raise ValueError("channel_names length does not match channel count")


def resample_bilinear(src: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resampling of a 2-D raster with corner-aligned grids."""
    src = np.asarray(src, dtype=np.float64)
    hs, ws = src.shape
    ht, wt = shape

    def coords(n_src, n_tgt):
        if n_tgt == 1 or n_src == 1:
            pos = np.zeros(n_tgt)
        else:
            pos = np.arange(n_tgt) * ((n_src - 1) / (n_tgt - 1))
        lo = np.clip(np.floor(pos).astype(np.int64), 0, n_src - 1)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    y0, y1, fy = coords(hs, ht)
    x0, x1, fx = coords(ws, wt)
    fy = fy[:, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def center_crop(data: np.ndarray, size: int) -> np.ndarray:
    h, w = data.shape[-2:]
    if h < size or w < size:
        raise ValueError(f"cannot crop {(h, w)} to {size}x{size}")
    top, left = (h - size) // 2, (w - size) // 2
    return data[..., top : top + size, left : left + size]


def assemble_patch(
    rgb: np.ndarray,
    env_layers: Sequence,
    channel_names: Sequence[str] | None = None,
    size: int = PATCH_SIZE,
) -> InputPatch:
    """Stack imagery bands with environmental rasters resampled to the imagery grid.

    ``env_layers`` holds 2-D rasters (any native grid). The stack is
    center-cropped to ``size`` x ``size``.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3:
        raise ValueError(f"rgb must be (bands, H, W), got {rgb.shape}")
    grid = rgb.shape[1:]
    channels = list(rgb)
    channels += [resample_bilinear(layer, grid) for layer in env_layers]
    if channel_names is None:
        channel_names = DEFAULT_CHANNELS if len(channels) == len(DEFAULT_CHANNELS) else [f"ch{i}" for i in range(len(channels))]
    channel_names = list(channel_names)
    if len(channel_names) != len(channels):
        raise ValueError(f"{len(channel_names)} channel names for {len(channels)} channels")
    for name, ch in zip(channel_names, channels):
        if not np.all(np.isfinite(ch)):
            raise ValueError(f"non-finite values in channel {name!r}")
    data = center_crop(np.stack(channels), size).astype(np.float32)
    return InputPatch(np.ascontiguousarray(data), channel_names)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    channel_names: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"channels": list(self.channel_names), "mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_json(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"]), np.array(d["std"]), list(d.get("channels", [])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_json(json.loads(Path(path).read_text()))


def _patch_array(p) -> np.ndarray:
    return p.data if isinstance(p, InputPatch) else np.asarray(p)


def fit_norm_stats(train_patches) -> NormStats:
    """Per-channel mean and population std over every pixel of the training patches."""
    arrays = [_patch_array(p) for p in train_patches]
    if not arrays:
        raise ValueError("no training patches")
    c = arrays[0].shape[0]
    count = 0
    total = np.zeros(c)
    for a in arrays:
        total += a.reshape(c, -1).sum(axis=1, dtype=np.float64)
        count += a[0].size
    mean = total / count
    sq = np.zeros(c)
    for a in arrays:
        d = a.reshape(c, -1).astype(np.float64) - mean[:, None]
        sq += (d * d).sum(axis=1)
    names = train_patches[0].channel_names if isinstance(train_patches[0], InputPatch) else []
    return NormStats(mean, np.sqrt(sq / count), list(names))


def _denom(stats: NormStats) -> np.ndarray:
    return np.maximum(stats.std, NORM_EPS)


def apply_norm(patch: InputPatch, stats: NormStats) -> InputPatch:
    if patch.normalized:
        raise ValueError("already normalized")
    if len(stats.mean) != patch.data.shape[0]:
        raise ValueError(f"stats cover {len(stats.mean)} channels, patch has {patch.data.shape[0]}")
    # kept in float64 so invert_norm restores float32 inputs exactly up to rounding
    data = (patch.data.astype(np.float64) - stats.mean[:, None, None]) / _denom(stats)[:, None, None]
    return InputPatch(data, patch.channel_names, normalized=True)


def invert_norm(patch: InputPatch, stats: NormStats) -> InputPatch:
    if not patch.normalized:
        raise ValueError("patch is not normalized")
    data = patch.data.astype(np.float64) * _denom(stats)[:, None, None] + stats.mean[:, None, None]
    return InputPatch(data.astype(patch.data.dtype), patch.channel_names, normalized=False)


def normalize_array(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Normalize a (N, C, H, W) or (C, H, W) array, keeping its dtype."""
    shape = (-1, 1, 1)
    return ((x - stats.mean.reshape(shape)) / _denom(stats).reshape(shape)).astype(x.dtype)


# ---------------------------------------------------------------- patch files

_MAGIC = b"SBPX"
_VERSION = 1


def write_patch(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"patch must be (C, H, W), got {data.shape}")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<HHHH", _VERSION, *data.shape))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_patch(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not an SBPX patch file")
    version, c, h, w = struct.unpack("<HHHH", raw[4:12])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported SBPX version {version}")
    expected = 12 + 4 * c * h * w
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=12).reshape(c, h, w).astype(np.float32)
