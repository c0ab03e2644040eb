import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occurate.catalog import ChecklistRecord, SpeciesCatalog
from occurate.geo import (
    DEFAULT_CHANNELS,
    EARTH_RADIUS_KM,
    Hotspot,
    InputPatch,
    apply_norm,
    assemble_patch,
    colocate,
    dbscan_clusters,
    fit_norm_stats,
    haversine_km,
    invert_norm,
    read_hotspots,
    read_patch,
    resample_bilinear,
    spatial_split,
    write_hotspots,
    write_patch,
)

lat = st.floats(-89.9, 89.9)
lon = st.floats(-179.9, 179.9)


class TestHaversine:
    def test_identity(self):
        assert haversine_km((12.3, 45.6), (12.3, 45.6)) == 0.0

    def test_antipodal(self):
        assert haversine_km((0, 0), (0, 180)) == pytest.approx(math.pi * 6371.0, abs=1e-6)
        assert haversine_km((0, 0), (0, 180)) == pytest.approx(20015.087, abs=1e-3)

    def test_one_degree_of_equator(self):
        assert haversine_km((0, 0), (0, 1)) == pytest.approx(2 * math.pi * 6371.0 / 360, rel=1e-12)

    def test_one_degree_of_meridian(self):
        assert haversine_km((10, 30), (11, 30)) == pytest.approx(111.195, abs=1e-3)

    @settings(max_examples=200, deadline=None)
    @given(lat, lon, lat, lon, lat, lon)
    def test_metric_axioms(self, a1, o1, a2, o2, a3, o3):
        p, q, r = (a1, o1), (a2, o2), (a3, o3)
        assert haversine_km(p, q) >= 0
        assert haversine_km(p, q) == pytest.approx(haversine_km(q, p), abs=1e-9)
        assert haversine_km(p, r) <= haversine_km(p, q) + haversine_km(q, r) + 1e-9

    def test_broadcasts(self):
        d = haversine_km(np.zeros((3, 2)), np.array([[0, 1], [0, 2], [0, 3]]))
        assert d.shape == (3,)
        np.testing.assert_allclose(d / d[0], [1, 2, 3], rtol=1e-12)


def _offset(p, km_north=0.0, km_east=0.0):
    dlat = km_north / EARTH_RADIUS_KM * 180 / math.pi
    dlon = km_east / (EARTH_RADIUS_KM * math.cos(math.radians(p[0]))) * 180 / math.pi
    return p[0] + dlat, p[1] + dlon


class TestColocate:
    @pytest.fixture
    def catalog(self):
        return SpeciesCatalog.from_names(["m", "s"], "B")

    def test_half_km_matched_two_km_not(self, catalog):
        c = [Hotspot("c0", 40.0, -75.0)]
        near = ChecklistRecord("x", frozenset({0}), True, *_offset((40.0, -75.0), 0.5))
        far = ChecklistRecord("y", frozenset({1}), True, *_offset((40.0, -75.0), 2.0))
        res = colocate(c, [near, far], catalog, radius_km=1.0)
        assert res.assignment == ["c0", None]
        assert (res.n_matched, res.n_unmatched) == (1, 1)
        np.testing.assert_array_equal(res.vectors["c0"].rates, [1.0, 0.0])

    def test_unmatched_centroid_has_no_availability(self, catalog):
        cs = [Hotspot("c0", 0.0, 0.0), Hotspot("c1", 10.0, 10.0)]
        res = colocate(cs, [ChecklistRecord("x", frozenset({0}), True, 0.0, 0.001)], catalog)
        assert not res.vectors["c1"].available.any()
        assert res.vectors["c0"].available.all()

    def test_tie_goes_to_smaller_index(self, catalog):
        cs = [Hotspot("east", 0.0, 0.005), Hotspot("west", 0.0, -0.005)]
        res = colocate(cs, [ChecklistRecord("x", frozenset(), True, 0.0, 0.0)], catalog)
        assert res.assignment == ["east"]

    def test_radius_must_be_positive(self, catalog):
        with pytest.raises(ValueError):
            colocate([], [], catalog, radius_km=0.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, catalog, seed):
        rng = np.random.default_rng(seed)
        base = np.array([45.0, 7.0])
        cll = base + rng.uniform(-0.05, 0.05, size=(20, 2))
        pll = base + rng.uniform(-0.06, 0.06, size=(200, 2))
        cents = [Hotspot(f"c{i}", *c) for i, c in enumerate(cll)]
        obs = [ChecklistRecord(f"o{i}", frozenset(), True, *p) for i, p in enumerate(pll)]
        res = colocate(cents, obs, catalog, radius_km=1.0)
        for i, p in enumerate(pll):
            d = [haversine_km(p, c) for c in cll]  # O(N*M) loop oracle
            best = min(range(20), key=lambda j: (d[j], j))
            expected = f"c{best}" if d[best] <= 1.0 else None
            assert res.assignment[i] == expected
        assert res.n_matched + res.n_unmatched == 200
        assert res.n_matched > 0 and res.n_unmatched > 0


def clustered_points(n, n_clusters, rng, spread_km=1.0):
    centres = np.column_stack([rng.uniform(25, 48, n_clusters), rng.uniform(-120, -70, n_clusters)])
    which = rng.integers(n_clusters, size=n)
    jitter = rng.normal(scale=spread_km / 111.0, size=(n, 2))
    pts = centres[which] + jitter
    return [Hotspot(f"h{i}", float(a), float(b)) for i, (a, b) in enumerate(pts)]


class TestSpatialSplit:
    def test_two_far_clusters_with_noise(self):
        a = [Hotspot(f"a{i}", 40.0 + 0.001 * i, -100.0) for i in range(5)]
        b = [Hotspot(f"b{i}", 44.5 + 0.001 * i, -100.0) for i in range(5)]
        iso = [Hotspot("z", 30.0, -80.0)]
        labels = spatial_split(a + b + iso, eps_km=5.0, seed=1)
        assert len(set(labels[:5])) == 1 and len(set(labels[5:10])) == 1

    def test_too_few_clusters(self):
        with pytest.raises(ValueError, match="insufficient spatial clusters"):
            spatial_split([Hotspot(f"a{i}", 40.0, -100.0 + 1e-4 * i) for i in range(10)])

    def test_bad_fractions(self):
        with pytest.raises(ValueError, match="fractions"):
            spatial_split([Hotspot("a", 0, 0)] * 3, fractions=(0.5, 0.5, 0.5))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_grouping_and_proportions(self, seed):
        rng = np.random.default_rng(seed)
        hs = clustered_points(2000, 150, rng)
        labels = spatial_split(hs, eps_km=5.0, seed=seed)
        assert len(labels) == len(hs) and set(labels) <= {"train", "val", "test"}
        clusters = dbscan_clusters(np.array([[h.lat, h.lon] for h in hs]), 5.0, 1)
        spans = {}
        for c, lab in zip(clusters, labels):
            spans.setdefault(c, set()).add(lab)
        assert all(len(s) == 1 for s in spans.values())
        frac = {s: labels.count(s) / len(labels) for s in ("train", "val", "test")}
        assert abs(frac["train"] - 0.70) <= 0.05
        assert abs(frac["val"] - 0.15) <= 0.05
        assert abs(frac["test"] - 0.15) <= 0.05

    def test_seed_determinism(self):
        hs = clustered_points(300, 40, np.random.default_rng(5))
        assert spatial_split(hs, seed=3) == spatial_split(hs, seed=3)


class TestPatches:
    def test_constant_layer_stays_constant(self):
        out = resample_bilinear(np.full((17, 23), 4.25), (64, 64))
        assert np.all(out == 4.25)

    def test_lattice_points_match_source(self):
        src = np.random.default_rng(0).standard_normal((50, 50))
        out = resample_bilinear(src, (64, 64))
        # corner-aligned: target i maps to source i*49/63 = 7i/9
        idx = np.arange(0, 64, 9)
        np.testing.assert_allclose(out[np.ix_(idx, idx)], src[np.ix_(7 * idx // 9, 7 * idx // 9)], rtol=0, atol=1e-12)

    def test_linear_ramp_reproduced(self):
        ramp = np.add.outer(np.arange(10.0), 2 * np.arange(8.0))
        out = resample_bilinear(ramp, (19, 15))
        y = np.arange(19) * 9 / 18
        x = np.arange(15) * 7 / 14
        np.testing.assert_allclose(out, np.add.outer(y, 2 * x), atol=1e-12)

    def test_default_stack_has_30_channels(self):
        rng = np.random.default_rng(1)
        env = [rng.uniform(size=(20, 20)) for _ in range(27)]
        p = assemble_patch(rng.uniform(size=(3, 80, 80)), env)
        assert p.data.shape == (30, 64, 64)
        assert p.channel_names == DEFAULT_CHANNELS

    def test_non_finite_names_channel(self):
        env = [np.ones((8, 8)), np.full((8, 8), np.nan)]
        with pytest.raises(ValueError, match="soil_x"):
            assemble_patch(np.ones((3, 64, 64)), env, ["r", "g", "b", "bio1", "soil_x"])

    def test_center_crop_offsets(self):
        rgb = np.arange(3 * 66 * 66, dtype=float).reshape(3, 66, 66)
        p = assemble_patch(rgb, [])
        np.testing.assert_array_equal(p.data, rgb[:, 1:65, 1:65].astype(np.float32))

    def test_sbpx_layout(self, tmp_path):
        data = np.random.default_rng(2).standard_normal((3, 4, 5)).astype(np.float32)
        write_patch(tmp_path / "x.sbpx", data)
        raw = (tmp_path / "x.sbpx").read_bytes()
        assert raw[:4] == b"SBPX"
        assert struct.unpack("<HHHH", raw[4:12]) == (1, 3, 4, 5)
        assert len(raw) == 12 + 4 * 60
        np.testing.assert_array_equal(np.frombuffer(raw[12:], "<f4").reshape(3, 4, 5), data)
        np.testing.assert_array_equal(read_patch(tmp_path / "x.sbpx"), data)

    def test_sbpx_rejects_bad_magic(self, tmp_path):
        (tmp_path / "bad.sbpx").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ValueError, match="not an SBPX"):
            read_patch(tmp_path / "bad.sbpx")

    def test_hotspot_csv_roundtrip(self, tmp_path):
        hs = [Hotspot("a", 1.5, -2.25), Hotspot("b", -89.0, 179.0)]
        write_hotspots(tmp_path / "h.csv", hs)
        back = read_hotspots(tmp_path / "h.csv")
        assert [(h.id, h.lat, h.lon) for h in back] == [("a", 1.5, -2.25), ("b", -89.0, 179.0)]

    def test_invalid_coordinates(self):
        with pytest.raises(ValueError, match="out of range"):
            Hotspot("x", 91.0, 0.0)


def welford(patches):
    """Streaming per-channel mean/variance, one pixel at a time per channel."""
    c = patches[0].shape[0]
    n, mean, m2 = 0, np.zeros(c), np.zeros(c)
    for p in patches:
        for v in p.reshape(c, -1).T.astype(np.float64):
            n += 1
            d = v - mean
            mean += d / n
            m2 += d * (v - mean)
    return mean, np.sqrt(m2 / n)


class TestNormalization:
    def test_matches_streaming_oracle(self):
        rng = np.random.default_rng(0)
        patches = [(rng.standard_normal((3, 8, 8)) * [[[2.0]], [[0.5]], [[10.0]]] + 3).astype(np.float32) for _ in range(12)]
        stats = fit_norm_stats(patches)
        mean, std = welford(patches)
        np.testing.assert_allclose(stats.mean, mean, rtol=1e-6)
        np.testing.assert_allclose(stats.std, std, rtol=1e-6)

    def test_standard_normal_after_norm(self):
        rng = np.random.default_rng(1)
        patches = [InputPatch(rng.normal(5.0, 3.0, (2, 32, 32))) for _ in range(20)]
        stats = fit_norm_stats(patches)
        flat = np.stack([apply_norm(p, stats).data for p in patches])
        assert abs(flat.mean()) < 0.05 and abs(flat.std() - 1) < 0.05

    def test_constant_channel_goes_to_zero(self):
        p = InputPatch(np.full((1, 4, 4), 7.0))
        out = apply_norm(p, fit_norm_stats([p]))
        assert np.all(out.data == 0.0)

    def test_twice_rejected(self):
        p = InputPatch(np.random.default_rng(2).standard_normal((2, 4, 4)))
        stats = fit_norm_stats([p])
        with pytest.raises(ValueError, match="already normalized"):
            apply_norm(apply_norm(p, stats), stats)

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(3)
        p = InputPatch((rng.standard_normal((3, 6, 6)) * 40 + 100).astype(np.float32))
        stats = fit_norm_stats([p])
        back = invert_norm(apply_norm(p, stats), stats)
        np.testing.assert_allclose(back.data, p.data, rtol=1e-5)

    def test_stats_json_roundtrip(self, tmp_path):
        p = InputPatch(np.random.default_rng(4).standard_normal((2, 3, 3)), ["x", "y"])
        stats = fit_norm_stats([p])
        stats.save(tmp_path / "norm_stats.json")
        back = type(stats).load(tmp_path / "norm_stats.json")
        np.testing.assert_array_equal(back.mean, stats.mean)
        assert back.channel_names == ["x", "y"]
