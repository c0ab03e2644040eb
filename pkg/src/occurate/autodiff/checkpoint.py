"""Checkpoint files: length-prefixed JSON header + float32 blobs in name order.

Layout::

    u64 little-endian  header length H
    H bytes            UTF-8 JSON {"format", "config", "config_hash", "params": [{name, shape}]}
    ...                little-endian float32 data for each param, in header order
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

FORMAT = "occurate-ckpt-1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def save_checkpoint(path, arrays: dict[str, np.ndarray], config: dict) -> None:
    names = sorted(arrays)
    header = {
        "format": FORMAT,
        "config": config,
        "config_hash": config_hash(config),
        "params": [{"name": k, "shape": list(arrays[k].shape)} for k in names],
    }
    hbytes = canonical_json(header).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for k in names:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (arrays, config). Raises ValueError on a malformed file."""
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (hlen,) = struct.unpack("<Q", data[:8])
    try:
        header = json.loads(data[8 : 8 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValueError(f"{path}: bad checkpoint header") from exc
    if header.get("format") != FORMAT:
        raise ValueError(f"{path}: not an occurate checkpoint")
    if header["config_hash"] != config_hash(header["config"]):
        raise ValueError(f"{path}: config hash mismatch")
    arrays = {}
    pos = 8 + hlen
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if pos + nbytes > len(data):
            raise ValueError(f"{path}: truncated data for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after parameter data")
    return arrays, header["config"]
