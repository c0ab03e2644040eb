"""``occurate`` command line: build-dataset, synth, train, eval, complete, gradcheck, report.

Failures print one line to stderr, ``error code=<CODE> exit=<N> msg=<json string>``,
and exit with 2 (config), 3 (data) or 4 (numerical failure).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np

log = logging.getLogger("occurate")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_INTERNAL = 0, 2, 3, 4, 1


class CLIError(Exception):
    code = "INTERNAL"
    exit_code = EXIT_INTERNAL


class ConfigError(CLIError):
    code, exit_code = "CONFIG", EXIT_CONFIG


class DataError(CLIError):
    code, exit_code = "DATA", EXIT_DATA


class NumericError(CLIError):
    code, exit_code = "NUMERIC", EXIT_NUMERIC


def _fail(err: Exception) -> int:
    if isinstance(err, CLIError):
        code, status = err.code, err.exit_code
    else:
        code, status = "INTERNAL", EXIT_INTERNAL
    msg = str(err).replace("\n", " ")
    print(f"error code={code} exit={status} msg={json.dumps(msg)}", file=sys.stderr)
    return status


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line usage errors
        raise ConfigError(f"{self.prog}: {message}")


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"{what} {path} not found") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{what} {path} is not valid JSON: {e}") from e


def _load_dataset(path):
    from .dataset import Dataset

    try:
        return Dataset.load(path)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"cannot load dataset {path}: {e}") from e


# ---------------------------------------------------------------- build-dataset


def _checklist_sources(specs):
    """``[GROUP=]PATH`` arguments as (group, path) pairs."""
    out = []
    for spec in specs:
        group, sep, path = spec.partition("=")
        if not sep:
            group, path = "all", spec
        out.append((group, path))
    return out


def build_dataset(args) -> dict:
    from .catalog import (
        ChecklistRecord, SpeciesCatalog, SpeciesEntry, compute_encounter_rates, filter_species, occurrence_counts,
        read_checklists_csv,
    )
    from .dataset import Dataset
    from .geo import Hotspot, colocate, default_channel_names, read_hotspots, read_patch, spatial_split

    if args.radius_km <= 0 or args.eps_km <= 0 or args.min_occurrences < 0:
        raise ConfigError("radius-km and eps-km must be positive, min-occurrences non-negative")
    try:
        hotspots = read_hotspots(args.hotspots)
        samples = read_hotspots(args.centroids) if args.centroids else hotspots
        where = {h.id: h for h in hotspots}
        sources = []
        for group, path in _checklist_sources(args.checklists):
            records, cat = read_checklists_csv(path)
            sources.append((group, records, cat))
    except (OSError, ValueError, KeyError) as e:
        raise DataError(str(e)) from e

    # one catalog across taxa: each group's species filtered on its own occurrence counts
    entries, offsets = [], []
    kept = []
    for group, records, cat in sources:
        counts = occurrence_counts(records, len(cat))
        try:
            sub = filter_species(counts, args.min_occurrences, cat)
        except ValueError as e:
            raise DataError(f"group {group}: {e}") from e
        keep_old = np.array([cat.index_of(nm) for nm in sub.names])
        base = len(entries)
        offsets.append(base)
        entries.extend([SpeciesEntry(base + i, nm, group) for i, nm in enumerate(sub.names)])
        kept.append(keep_old)
    catalog = SpeciesCatalog(entries)
    n = len(catalog)

    sample_ids = [h.id for h in samples]
    id_set = set(sample_ids)
    rates = np.zeros((len(samples), n), dtype=np.float64)
    avail = np.zeros((len(samples), n), dtype=bool)
    summary = {}
    for (group, records, cat), off, keep_old in zip(sources, offsets, kept):
        remap = {int(old): off + i for i, old in enumerate(keep_old)}
        group_cols = np.zeros(n, dtype=bool)
        group_cols[off : off + len(keep_old)] = True
        recs = []
        for r in records:
            lat, lon = r.lat, r.lon
            if (lat is None or lon is None) and r.hotspot_id in where:
                lat, lon = where[r.hotspot_id].lat, where[r.hotspot_id].lon
            recs.append(ChecklistRecord(r.hotspot_id, frozenset(remap[s] for s in r.observed if s in remap), r.complete, lat, lon))
        if args.centroids:
            direct = [r for r in recs if r.hotspot_id in id_set]
            spatial = [r for r in recs if r.hotspot_id not in id_set]
            by_id = compute_encounter_rates(direct, catalog, group_cols)
            res = colocate(samples, spatial, catalog, args.radius_km, group_cols) if spatial else None
            summary[group] = {"direct": len(direct), "matched": res.n_matched if res else 0, "unmatched": res.n_unmatched if res else 0}
            vectors = OrderedDict()
            for sid in sample_ids:
                v = by_id.get(sid)
                if v is None and res is not None and res.vectors[sid].available.any():
                    v = res.vectors[sid]
                if v is not None:
                    vectors[sid] = v
        else:
            unknown = {r.hotspot_id for r in recs} - id_set
            if unknown:
                log.warning("%d checklist hotspots are not in %s; ignored", len(unknown), args.hotspots)
            vectors = compute_encounter_rates([r for r in recs if r.hotspot_id in id_set], catalog, group_cols)
            summary[group] = {"direct": len(recs), "matched": 0, "unmatched": 0}
        for i, sid in enumerate(sample_ids):
            v = vectors.get(sid)
            if v is not None:
                rates[i, group_cols] = v.rates[group_cols]
                avail[i, group_cols] = v.available[group_cols]

    keep = avail.any(axis=1)
    if not keep.all():
        log.warning("%d locations have no target data; dropped", int((~keep).sum()))
    samples = [Hotspot(h.id, h.lat, h.lon) for h, k in zip(samples, keep) if k]
    rates, avail = rates[keep], avail[keep]
    patches = []
    for h in samples:
        path = Path(args.patches) / f"{h.id}.sbpx"
        try:
            patches.append(read_patch(path))
        except (OSError, ValueError) as e:
            raise DataError(f"patch for hotspot {h.id}: {e}") from e
    if not patches:
        raise DataError("no locations with targets")
    if len({p.shape for p in patches}) != 1:
        raise DataError("patches differ in shape")
    try:
        labels = spatial_split(samples, eps_km=args.eps_km, min_samples=args.min_samples, seed=args.seed)
    except ValueError as e:
        raise DataError(str(e)) from e
    for h, lab in zip(samples, labels):
        h.split = lab
    channels = default_channel_names(patches[0].shape[0])
    config = {
        "command": "build-dataset",
        "checklists": list(args.checklists),
        "hotspots": str(args.hotspots),
        "centroids": str(args.centroids) if args.centroids else None,
        "radius_km": args.radius_km,
        "min_occurrences": args.min_occurrences,
        "eps_km": args.eps_km,
        "min_samples": args.min_samples,
        "seed": args.seed,
        "colocation": summary,
    }
    try:
        ds = Dataset(catalog, samples, np.stack(patches), rates.astype(np.float32), avail, channels, config=config)
        ds.fit_norm()
    except ValueError as e:
        raise DataError(str(e)) from e
    ds.save(args.out)
    return {"out": str(args.out), "n_samples": len(ds), "n_species": n, "content_hash": ds.content_hash()}


# ---------------------------------------------------------------- synth / train


def synth(args) -> dict:
    from .synth import SynthConfig, generate

    raw = _read_json(args.config, "synth config") if args.config else {}
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        if "patch_shape" in raw:
            raw["patch_shape"] = tuple(raw["patch_shape"])
        cfg = SynthConfig(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"synth config: {e}") from e
    ds = generate(cfg)
    ds.save(args.out)
    return {"out": str(args.out), "n_samples": len(ds), "n_species": len(ds.catalog), "content_hash": ds.content_hash()}


def _model_overrides(path) -> dict:
    return _read_json(path, "model config") if path else {}


def train_cmd(args) -> dict:
    from .model import ModelConfig, build_model
    from .train import NumericalError, TrainConfig, train

    ds = _load_dataset(args.data)
    try:
        overrides = _model_overrides(args.model_config)
        mcfg = ModelConfig(
            **{"kind": args.model, "n_species": len(ds.catalog), "in_channels": ds.patches.shape[1], "seed": args.seed, **overrides}
        )
        if mcfg.n_species != len(ds.catalog) or mcfg.in_channels != ds.patches.shape[1]:
            raise ValueError("model config disagrees with the dataset's species or channel count")
        tcfg = TrainConfig(
            epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr, seed=args.seed,
            mask_training=not args.no_mask_training,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    model = build_model(mcfg)
    try:
        res = train(model, ds, tcfg, out_dir=args.out)
    except NumericalError as e:
        raise NumericError(str(e)) from e
    except ValueError as e:
        raise DataError(str(e)) from e
    return {"out": str(args.out), "best_epoch": res.best_epoch, "best_val_mse": res.best_val_mse}


# ---------------------------------------------------------------- eval / report


def _parse_seeds(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--seeds must be comma-separated integers, got {text!r}") from e


def _load_ckpt(path):
    from .train import load_model

    try:
        return load_model(path)
    except FileNotFoundError as e:
        raise DataError(f"checkpoint {path} not found") from e
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise DataError(f"checkpoint {path}: {e}") from e


def evaluate_checkpoint(ds, ckpt, known_group, method, split="test", iters=25, rate=0.05, seed=None, require_group=None):
    """One MetricsReport for a checkpoint on a dataset split."""
    from .metrics import evaluate
    from .train import NumericalError, run_eval

    model, ckcfg = _load_ckpt(ckpt)
    if model.config.n_species != len(ds.catalog):
        raise DataError(f"checkpoint predicts {model.config.n_species} species, dataset has {len(ds.catalog)}")
    groups = ds.catalog.groups
    if known_group is not None and known_group not in groups:
        raise ConfigError(f"unknown group {known_group!r}; dataset groups are {groups}")
    if method == "feedbackprop" and model.config.kind != "baseline":
        raise ConfigError("feedbackprop runs on a baseline checkpoint")
    if method == "feedbackprop" and known_group is None:
        raise ConfigError("feedbackprop needs --known-group")
    try:
        out = run_eval(model, ds, split, known_group, method, iters=iters, rate=rate, require_group=require_group)
    except NumericalError as e:
        raise NumericError(str(e)) from e
    if not np.all(np.isfinite(out.predictions)):
        raise NumericError("non-finite predictions")
    others = [g for g in groups if g != known_group]
    group = others[0] if known_group is not None and len(others) == 1 else ("all" if known_group is None else "~" + known_group)
    try:
        return evaluate(
            out.predictions, out.targets, out.available, out.eval_mask, group,
            seeds=[seed] if seed is not None else ([ckcfg.get("train", {}).get("seed")] if ckcfg.get("train") else []),
            dataset_hash=ds.content_hash(), model=model.config.kind, method=method, known_group=known_group,
        )
    except ValueError as e:
        raise DataError(str(e)) from e


def eval_cmd(args) -> dict:
    from .metrics import aggregate_seeds, save_reports

    ds = _load_dataset(args.data)
    known = None if args.known_group in (None, "none") else args.known_group
    seeds = _parse_seeds(args.seeds)
    if seeds and "{seed}" not in args.ckpt and len(seeds) > 1:
        raise ConfigError("--ckpt must contain a {seed} placeholder when several --seeds are given")
    paths = [(s, args.ckpt.replace("{seed}", str(s))) for s in seeds] or [(None, args.ckpt)]
    reports = [
        evaluate_checkpoint(ds, p, known, args.method, args.split, args.iters, args.rate, seed=s) for s, p in paths
    ]
    agg = aggregate_seeds(reports)
    config = {
        "command": "eval", "data": str(args.data), "ckpt": args.ckpt, "known_group": known, "method": args.method,
        "seeds": seeds, "split": args.split, "iters": args.iters, "rate": args.rate,
    }
    save_reports(args.out, reports, aggregate=agg.to_json(), config=config)
    return {"out": str(args.out), "group": agg.group, "mae": agg.mae, "mse": agg.mse, "topk": agg.topk}


def report_cmd(args) -> dict:
    from .metrics import MetricsReport, aggregate_seeds, load_reports, render_table

    rows = []
    for path in args.inputs:
        data = _read_json(path, "report")
        if isinstance(data, dict) and "aggregate" in data:
            rows.append(MetricsReport.from_json(data["aggregate"]))
        else:
            try:
                rows.append(aggregate_seeds(load_reports(path)))
            except (ValueError, KeyError, TypeError) as e:
                raise DataError(f"{path}: {e}") from e
    table = render_table(rows)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(table)
    return {"out": str(args.out), "rows": len(rows)}


# ---------------------------------------------------------------- complete / gradcheck


def parse_known(text: str | None) -> dict:
    """``"name=0.3;other=present;third=absent"`` -> {name: 0.3, other: True, third: False}."""
    known = {}
    for item in (text or "").split(";"):
        item = item.strip()
        if not item:
            continue
        name, sep, val = item.rpartition("=")
        if not sep or not name.strip():
            raise ConfigError(f"--known entry {item!r} is not name=value")
        val = val.strip().lower()
        if val in ("present", "yes", "true"):
            known[name.strip()] = True
        elif val in ("absent", "no", "false"):
            known[name.strip()] = False
        else:
            try:
                rate = float(val)
            except ValueError as e:
                raise ConfigError(f"--known value {val!r} for {name.strip()!r} is not a rate or present/absent") from e
            if not 0.0 <= rate <= 1.0:
                raise ConfigError(f"--known rate for {name.strip()!r} must be in [0, 1]")
            known[name.strip()] = rate
    return known


def complete_cmd(args) -> dict:
    from .catalog import SpeciesCatalog
    from .geo import NormStats, normalize_array, read_patch
    from .model import RTran
    from .train import predict, predict_batched, feedback_prop

    model, ckcfg = _load_ckpt(args.ckpt)
    if "catalog" not in ckcfg:
        raise DataError("checkpoint carries no species catalog")
    catalog = SpeciesCatalog.from_json(ckcfg["catalog"])
    known = parse_known(args.known)
    for name in known:
        if name not in catalog.names:
            raise ConfigError(f"unknown species {name!r}")
    try:
        patch = read_patch(args.patch)
    except (OSError, ValueError) as e:
        raise DataError(f"patch {args.patch}: {e}") from e
    if patch.shape[0] != model.config.in_channels:
        raise DataError(f"patch has {patch.shape[0]} channels, model expects {model.config.in_channels}")
    if "norm_stats" in ckcfg:
        patch = normalize_array(patch, NormStats.from_json(ckcfg["norm_stats"]))
    patch = patch.astype(model.dtype)
    if isinstance(model, RTran):
        vec = predict(model, patch, known, catalog)
    elif known:
        vec = feedback_prop(model, patch, known, catalog, iters=args.iters, rate=args.rate)
    else:
        from .catalog import EncounterVector

        pred = predict_batched(model, patch[None])[0].astype(np.float64)
        vec = EncounterVector(pred, np.ones(len(catalog), dtype=bool), echoed=np.zeros(len(catalog), dtype=bool))
    if not np.all(np.isfinite(vec.rates)):
        raise NumericError("non-finite predictions")
    result = {
        "species": [
            {"name": e.name, "group": e.group, "rate": float(r), "known": bool(k)}
            for e, r, k in zip(catalog.entries, vec.rates, vec.echoed)
        ],
        "model": model.config.kind,
    }
    if args.out:
        _write_json(args.out, result)
    else:
        print(json.dumps(result, sort_keys=True))
    return {"out": args.out} if args.out else {}


def gradcheck_cmd(args) -> dict:
    from .train.checks import TOLERANCE, tiny_rtran_gradcheck

    res = tiny_rtran_gradcheck(args.seed, n_coords=args.coords)
    report = {
        "seed": args.seed, "max_rel_error": res.max_rel_error, "n_coords": res.n_coords,
        "worst": list(res.worst) if res.worst else None, "tolerance": TOLERANCE,
    }
    print(json.dumps(report, sort_keys=True))
    if not res.max_rel_error < TOLERANCE:
        raise NumericError(f"gradient check failed: max relative error {res.max_rel_error:.3e} >= {TOLERANCE:g}")
    return {}


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="occurate", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    b = sub.add_parser("build-dataset", help="assemble a dataset from checklists, hotspots and patches")
    b.add_argument("--checklists", action="append", required=True, metavar="[GROUP=]CSV")
    b.add_argument("--hotspots", required=True)
    b.add_argument("--patches", required=True, help="directory of <id>.sbpx patches")
    b.add_argument("--centroids")
    b.add_argument("--radius-km", type=float, default=1.0)
    b.add_argument("--min-occurrences", type=int, default=100)
    b.add_argument("--eps-km", type=float, default=5.0)
    b.add_argument("--min-samples", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=build_dataset)

    s = sub.add_parser("synth", help="generate the coupled synthetic benchmark")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=synth)

    t = sub.add_parser("train", help="train R-Tran or the baseline")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=["rtran", "baseline"], required=True)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--model-config", help="JSON file of model hyperparameters")
    t.add_argument("--no-mask-training", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=train_cmd)

    e = sub.add_parser("eval", help="masked metrics on a split")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True, help="checkpoint path; may contain {seed}")
    e.add_argument("--known-group", default="none")
    e.add_argument("--method", choices=["direct", "feedbackprop"], default="direct")
    e.add_argument("--seeds")
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--iters", type=int, default=25)
    e.add_argument("--rate", type=float, default=0.05)
    e.add_argument("--out", required=True)
    e.set_defaults(func=eval_cmd)

    c = sub.add_parser("complete", help="complete a partial checklist for one patch")
    c.add_argument("--ckpt", required=True)
    c.add_argument("--patch", required=True)
    c.add_argument("--known", default="")
    c.add_argument("--iters", type=int, default=25)
    c.add_argument("--rate", type=float, default=0.05)
    c.add_argument("--out")
    c.set_defaults(func=complete_cmd)

    g = sub.add_parser("gradcheck", help="finite-difference check of a tiny R-Tran")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--coords", type=int, default=256)
    g.set_defaults(func=gradcheck_cmd)

    r = sub.add_parser("report", help="aggregate report.json files into a markdown table")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=report_cmd)
    return p


def _thread_limit() -> int:
    raw = os.environ.get("OCCURATE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as e:
        raise ConfigError(f"OCCURATE_THREADS must be a positive integer, got {raw!r}") from e
    if n < 1:
        raise ConfigError(f"OCCURATE_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "func", None):
            raise ConfigError("missing command (build-dataset|synth|train|eval|complete|gradcheck|report)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=_thread_limit()):
            summary = args.func(args)
        if summary:
            log.info("%s", json.dumps(summary, sort_keys=True))
        return EXIT_OK
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except CLIError as e:
        return _fail(e)
    except Exception as e:  # noqa: BLE001  last resort, still one line
        return _fail(e)


if __name__ == "__main__":
    sys.exit(main())
