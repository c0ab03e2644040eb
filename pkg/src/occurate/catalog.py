"""Species catalogs, checklist ingestion and encounter-rate targets."""

from __future__ import annotations

import csv
import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpeciesEntry:
    species_id: int
    name: str
    group: str


class SpeciesCatalog:
    """Ordered species with group tags; ``len(catalog)`` is the target dimension."""

    def __init__(self, entries: Iterable[SpeciesEntry]):
        self.entries = tuple(entries)
        ids = [e.species_id for e in self.entries]
        if ids != list(range(len(ids))):
            raise ValueError("species ids must be 0..n-1 in order")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("species names must be unique")
        self._by_name = {e.name: e.species_id for e in self.entries}

    @classmethod
    def from_names(cls, names: Sequence[str], groups: Sequence[str] | str) -> "SpeciesCatalog":
        if isinstance(groups, str):
            groups = [groups] * len(names)
        return cls(SpeciesEntry(i, n, g) for i, (n, g) in enumerate(zip(names, groups)))

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return isinstance(other, SpeciesCatalog) and self.entries == other.entries

    def __repr__(self) -> str:
        return f"SpeciesCatalog(n={len(self)}, groups={self.groups})"

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def groups(self) -> list[str]:
        """Group tags in order of first appearance."""
        return list(OrderedDict.fromkeys(e.group for e in self.entries))

    def index_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown species {name!r}") from None

    def group_indices(self, group: str) -> np.ndarray:
        idx = [e.species_id for e in self.entries if e.group == group]
        if not idx:
            raise KeyError(f"unknown group {group!r}; catalog groups are {self.groups}")
        return np.array(idx, dtype=np.int64)

    def group_mask(self, group: str) -> np.ndarray:
        mask = np.zeros(len(self), dtype=bool)
        mask[self.group_indices(group)] = True
        return mask

    def subset(self, indices: Sequence[int]) -> "SpeciesCatalog":
        """Keep the given species (in catalog order) and re-index contiguously."""
        keep = sorted(set(int(i) for i in indices))
        return SpeciesCatalog(
            SpeciesEntry(new, self.entries[old].name, self.entries[old].group) for new, old in enumerate(keep)
        )

    def to_json(self) -> list[dict]:
        return [{"id": e.species_id, "name": e.name, "group": e.group} for e in self.entries]

    @classmethod
    def from_json(cls, data: list[dict]) -> "SpeciesCatalog":
        return cls(SpeciesEntry(int(d["id"]), str(d["name"]), str(d["group"])) for d in data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SpeciesCatalog":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ChecklistRecord:
    hotspot_id: str
    observed: frozenset
    complete: bool = True
    lat: float | None = None
    lon: float | None = None


@dataclass
class EncounterVector:
    rates: np.ndarray
    available: np.ndarray
    n_checklists: int = 0
    echoed: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.available = np.asarray(self.available, dtype=bool)
        if self.rates.shape != self.available.shape:
            raise ValueError("rates and availability mask differ in shape")


def compute_encounter_rates(
    checklists: Mapping[str, Sequence[ChecklistRecord]] | Iterable[ChecklistRecord],
    catalog: SpeciesCatalog,
    available: np.ndarray | None = None,
) -> "OrderedDict[str, EncounterVector]":
    """Per-hotspot fraction of complete checklists reporting each species.

    ``checklists`` may be a mapping hotspot -> records or a flat iterable
    (grouped by first appearance). Incomplete checklists are ignored; a
    hotspot left with no complete checklist is dropped with a warning.
    ``available`` marks the species the source dataset covers (default: all).
    """
    if isinstance(checklists, Mapping):
        grouped = OrderedDict((k, list(v)) for k, v in checklists.items())
    else:
        grouped = OrderedDict()
        for rec in checklists:
            grouped.setdefault(rec.hotspot_id, []).append(rec)
    n = len(catalog)
    avail = np.ones(n, dtype=bool) if available is None else np.asarray(available, dtype=bool)

    out: OrderedDict[str, EncounterVector] = OrderedDict()
    for hotspot, records in grouped.items():
        complete = [r for r in records if r.complete]
        if not complete:
            log.warning("hotspot %s has no complete checklists; excluded", hotspot)
            continue
        counts = np.zeros(n, dtype=np.int64)
        for rec in complete:
            for sid in rec.observed:
                if not 0 <= sid < n:
                    raise ValueError(f"checklist at {hotspot} reports species id {sid} outside the catalog")
                counts[sid] += 1
        rates = counts / float(len(complete))
        out[hotspot] = EncounterVector(np.where(avail, rates, 0.0), avail.copy(), n_checklists=len(complete))
    return out


def occurrence_counts(checklists: Iterable[ChecklistRecord], n_species: int) -> np.ndarray:
    """Number of complete checklists reporting each species."""
    counts = np.zeros(n_species, dtype=np.int64)
    for rec in checklists:
        if rec.complete:
            for sid in rec.observed:
                counts[sid] += 1
    return counts


def filter_species(
    counts: Mapping[int, int] | Sequence[int], min_occurrences: int, catalog: SpeciesCatalog | None = None
) -> SpeciesCatalog:
    """Keep species with at least ``min_occurrences`` occurrences, re-indexed in original order."""
    if isinstance(counts, Mapping):
        n = len(catalog) if catalog is not None else max(counts) + 1
        arr = np.array([counts.get(i, 0) for i in range(n)])
    else:
        arr = np.asarray(counts)
    if catalog is None:
        catalog = SpeciesCatalog.from_names([f"species_{i}" for i in range(len(arr))], "all")
    if len(arr) != len(catalog):
        raise ValueError(f"{len(arr)} counts for a catalog of {len(catalog)} species")
    keep = np.flatnonzero(arr >= min_occurrences)
    if keep.size == 0:
        raise ValueError("no species pass threshold")
    return catalog.subset(keep)


def restrict(vector: EncounterVector, group: str, catalog: SpeciesCatalog) -> EncounterVector:
    """Sub-vector over one group's species, in catalog order."""
    idx = catalog.group_indices(group)
    return EncounterVector(vector.rates[idx], vector.available[idx], vector.n_checklists)


def read_checklists_csv(path, catalog: SpeciesCatalog | None = None):
    """Parse ``hotspot_id,lat,lon,complete,species_list`` rows.

    Species names not in ``catalog`` are dropped from ``observed`` but the
    checklist still counts toward its hotspot's total. With no catalog, one
    is built from every name seen, in first-appearance order.
    Returns (records, catalog).
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"hotspot_id", "lat", "lon", "complete", "species_list"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            names = [s.strip() for s in (row["species_list"] or "").split(";") if s.strip()]
            rows.append((row, names))
    if catalog is None:
        seen = OrderedDict()
        for _, names in rows:
            for nm in names:
                seen.setdefault(nm, None)
        catalog = SpeciesCatalog.from_names(list(seen), "all")
    lookup = {e.name: e.species_id for e in catalog.entries}
    records = []
    for row, names in rows:
        complete = str(row["complete"]).strip().lower() in ("1", "true", "yes", "y", "t")
        observed = frozenset(lookup[nm] for nm in names if nm in lookup)
        records.append(ChecklistRecord(row["hotspot_id"], observed, complete, float(row["lat"]), float(row["lon"])))
    return records, catalog
