import json
import re

import numpy as np
import pytest

from occurate.cli import main, parse_known
from occurate.dataset import Dataset
from occurate.geo import Hotspot, write_hotspots, write_patch

ERROR_LINE = re.compile(r'^error code=(CONFIG|DATA|NUMERIC|INTERNAL) exit=(\d) msg=".*"$')

TINY_MODEL = {"widths": [8, 8, 16, 16], "groups": 4, "d_model": 16, "layers": 1, "heads": 2, "d_ff": 32}


def run(*args):
    return main([str(a) for a in args])


def assert_error(capsys, code, status):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1, err
    m = ERROR_LINE.match(err[0])
    assert m and m.group(1) == code and int(m.group(2)) == status, err[0]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    (d / "cfg.json").write_text(json.dumps({"n_samples": 160, "patch_shape": [4, 16, 16], "n_species_A": 5, "n_species_B": 3}))
    assert run("synth", "--config", d / "cfg.json", "--out", d / "ds") == 0
    (d / "model.json").write_text(json.dumps(TINY_MODEL))
    for kind in ("rtran", "baseline"):
        assert run("train", "--data", d / "ds", "--model", kind, "--epochs", 2, "--lr", 3e-3,
                   "--model-config", d / "model.json", "--out", d / f"{kind}0") == 0
    return d


def files_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestDeterminism:
    def test_synth_twice(self, synth_dir, tmp_path):
        assert run("synth", "--config", synth_dir / "cfg.json", "--out", tmp_path / "again") == 0
        assert files_bytes(tmp_path / "again") == files_bytes(synth_dir / "ds")

    def test_train_twice(self, synth_dir, tmp_path):
        assert run("train", "--data", synth_dir / "ds", "--model", "rtran", "--epochs", 2, "--lr", 3e-3,
                   "--model-config", synth_dir / "model.json", "--out", tmp_path / "r") == 0
        assert files_bytes(tmp_path / "r") == files_bytes(synth_dir / "rtran0")

    def test_eval_twice(self, synth_dir, tmp_path):
        for name in ("a.json", "b.json"):
            assert run("eval", "--data", synth_dir / "ds", "--ckpt", synth_dir / "baseline0/model.ckpt",
                       "--known-group", "A", "--method", "feedbackprop", "--iters", 3, "--out", tmp_path / name) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


class TestCommands:
    def test_eval_seed_placeholder_and_report(self, synth_dir, tmp_path):
        assert run("eval", "--data", synth_dir / "ds", "--ckpt", str(synth_dir / "rtran{seed}/model.ckpt"),
                   "--seeds", "0", "--known-group", "B", "--out", tmp_path / "r.json") == 0
        rep = json.loads((tmp_path / "r.json").read_text())
        assert rep["aggregate"]["group"] == "A" and rep["aggregate"]["known_group"] == "B"
        assert rep["aggregate"]["seeds"] == [0] and rep["config"]["method"] == "direct"
        assert run("report", "--inputs", tmp_path / "r.json", "--out", tmp_path / "table.md") == 0
        assert "R-Tran (A \\| B)" in (tmp_path / "table.md").read_text()

    def test_eval_none_is_all_species(self, synth_dir, tmp_path):
        assert run("eval", "--data", synth_dir / "ds", "--ckpt", synth_dir / "rtran0/model.ckpt", "--out", tmp_path / "r.json") == 0
        assert json.loads((tmp_path / "r.json").read_text())["aggregate"]["group"] == "all"

    def test_complete_outputs(self, synth_dir, tmp_path, capsys):
        patch = synth_dir / "ds/patches/s00000.sbpx"
        assert run("complete", "--ckpt", synth_dir / "rtran0/model.ckpt", "--patch", patch, "--out", tmp_path / "c.json") == 0
        full = json.loads((tmp_path / "c.json").read_text())["species"]
        assert len(full) == 8 and not any(s["known"] for s in full)
        assert run("complete", "--ckpt", synth_dir / "baseline0/model.ckpt", "--patch", patch, "--known", "a000=0.3;b002=present") == 0
        out = json.loads(capsys.readouterr().out)
        rates = {s["name"]: s for s in out["species"]}
        assert rates["a000"]["rate"] == 0.3 and rates["b002"]["rate"] == 1.0 and rates["b002"]["known"]

    def test_gradcheck(self, capsys):
        assert run("gradcheck", "--seed", 2) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["max_rel_error"] < 1e-4 and report["n_coords"] == 256


class TestErrors:
    def test_missing_dataset_is_data_error(self, tmp_path, capsys):
        assert run("train", "--data", tmp_path / "nope", "--model", "rtran", "--out", tmp_path / "o") == 3
        assert_error(capsys, "DATA", 3)

    def test_bad_flag_is_config_error(self, capsys):
        assert run("train", "--model", "cnn") == 2
        assert_error(capsys, "CONFIG", 2)

    def test_no_command(self, capsys):
        assert run() == 2
        assert_error(capsys, "CONFIG", 2)

    def test_bad_synth_config(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text('{"coupling": 3}')
        assert run("synth", "--config", tmp_path / "c.json", "--out", tmp_path / "o") == 2
        assert_error(capsys, "CONFIG", 2)

    def test_feedbackprop_on_rtran(self, synth_dir, tmp_path, capsys):
        assert run("eval", "--data", synth_dir / "ds", "--ckpt", synth_dir / "rtran0/model.ckpt", "--known-group", "A",
                   "--method", "feedbackprop", "--out", tmp_path / "x.json") == 2
        assert_error(capsys, "CONFIG", 2)

    def test_unknown_species_in_known(self, synth_dir, capsys):
        assert run("complete", "--ckpt", synth_dir / "rtran0/model.ckpt", "--patch", synth_dir / "ds/patches/s00000.sbpx",
                   "--known", "zebra=0.5") == 2
        assert_error(capsys, "CONFIG", 2)

    def test_non_finite_weights_is_numeric_error(self, synth_dir, tmp_path, capsys):
        from occurate.autodiff import load_checkpoint, save_checkpoint

        arrays, cfg = load_checkpoint(synth_dir / "baseline0/model.ckpt")
        arrays["head.weight"][:] = np.nan
        save_checkpoint(tmp_path / "nan.ckpt", arrays, cfg)
        assert run("eval", "--data", synth_dir / "ds", "--ckpt", tmp_path / "nan.ckpt", "--out", tmp_path / "r.json") == 4
        assert_error(capsys, "NUMERIC", 4)

    def test_bad_learning_rate(self, synth_dir, tmp_path, capsys):
        assert run("train", "--data", synth_dir / "ds", "--model", "baseline", "--lr", "-1", "--out", tmp_path / "o") == 2
        assert_error(capsys, "CONFIG", 2)

    def test_thread_env(self, monkeypatch, capsys):
        monkeypatch.setenv("OCCURATE_THREADS", "many")
        assert run("gradcheck") == 2
        assert_error(capsys, "CONFIG", 2)


def test_parse_known():
    assert parse_known("a=0.3; b=present;c=absent;;") == {"a": 0.3, "b": True, "c": False}
    assert parse_known("") == {}
    for bad in ("a", "a=2", "a=lots"):
        with pytest.raises(Exception):
            parse_known(bad)


# ---------------------------------------------------------------- build-dataset


@pytest.fixture
def raw_inputs(tmp_path):
    rng = np.random.default_rng(0)
    centres = [(30 + 2 * i, -100 + 3 * i) for i in range(8)]
    hotspots = [Hotspot(f"h{c}{j}", lat + 0.002 * j, lon) for c, (lat, lon) in enumerate(centres) for j in range(5)]
    write_hotspots(tmp_path / "hotspots.csv", hotspots)
    (tmp_path / "patches").mkdir()
    for h in hotspots:
        write_patch(tmp_path / "patches" / f"{h.id}.sbpx", rng.standard_normal((3, 8, 8)).astype(np.float32))
    birds = ["hotspot_id,lat,lon,complete,species_list"]
    for h in hotspots:
        for k in range(4):
            names = [s for s in ("robin", "wren", "jay") if rng.uniform() < 0.6] + (["rare"] if h.id == "h00" and k == 0 else [])
            birds.append(f"{h.id},{h.lat},{h.lon},{int(k < 3)},{';'.join(names)}")
    (tmp_path / "birds.csv").write_text("\n".join(birds) + "\n")
    bflies = ["hotspot_id,lat,lon,complete,species_list"]
    for i, h in enumerate(hotspots[::2]):
        bflies.append(f"obs{i},{h.lat},{h.lon + 0.0005},1,monarch;{'skipper' if i % 2 else ''}")
        bflies.append(f"obs{i}b,{h.lat},{h.lon - 0.0005},1,monarch;skipper")
    bflies.append("far,0.0,0.0,1,monarch")
    (tmp_path / "bflies.csv").write_text("\n".join(bflies) + "\n")
    return tmp_path


def test_build_dataset_with_colocation(raw_inputs):
    d = raw_inputs
    args = ["build-dataset", "--checklists", f"birds={d / 'birds.csv'}", "--checklists", f"butterflies={d / 'bflies.csv'}",
            "--hotspots", d / "hotspots.csv", "--centroids", d / "hotspots.csv", "--patches", d / "patches",
            "--min-occurrences", 2, "--radius-km", 1.0, "--eps-km", 5.0]
    assert run(*args, "--out", d / "out") == 0
    ds = Dataset.load(d / "out")
    assert set(ds.catalog.names[:3]) == {"robin", "wren", "jay"}  # "rare" is below the threshold
    assert ds.catalog.names[3:] == ["monarch", "skipper"]
    assert ds.catalog.groups == ["birds", "butterflies"]
    assert len(ds) == 40
    # butterflies only observed at every other hotspot
    bf = ds.catalog.group_mask("butterflies")
    assert ds.available[:, bf].any(axis=1).sum() == 20
    assert np.all(ds.rates[ds.available[:, bf].any(axis=1)][:, 3] == 1.0)
    clusters = {}
    for h in ds.hotspots:
        clusters.setdefault(h.id[:2], set()).add(h.split)
    assert all(len(s) == 1 for s in clusters.values())
    cfg = json.loads((d / "out/config.json").read_text())
    assert cfg["colocation"]["butterflies"]["unmatched"] == 1
    assert run(*args, "--out", d / "out2") == 0
    assert files_bytes(d / "out") == files_bytes(d / "out2")


def test_build_dataset_threshold_too_high(raw_inputs, capsys):
    d = raw_inputs
    assert run("build-dataset", "--checklists", d / "birds.csv", "--hotspots", d / "hotspots.csv",
               "--patches", d / "patches", "--out", d / "o") == 3
    assert_error(capsys, "DATA", 3)


def test_build_dataset_missing_patch(raw_inputs, capsys):
    d = raw_inputs
    (d / "patches" / "h00.sbpx").unlink()
    assert run("build-dataset", "--checklists", d / "birds.csv", "--hotspots", d / "hotspots.csv",
               "--patches", d / "patches", "--min-occurrences", 1, "--out", d / "o") == 3
    assert_error(capsys, "DATA", 3)
