"""Scene generator, boundary bands, PGM round-trips, manifests."""

import numpy as np
import pytest

from bigconv.data import (ManifestError, PgmError, SceneSample, assign_splits,
                          boundary_from_mask, default_boundary_thickness,
                          generate_dataset, generate_scene, load_samples,
                          read_manifest, read_pgm, split_counts, write_manifest,
                          write_pgm)
from bigconv.morphology import dilate, erode


class TestGenerateScene:
    def test_same_seed_bit_identical(self):
        a = generate_scene(11, 64, "easy")
        b = generate_scene(11, 64, "easy")
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.region_gt, b.region_gt)
        assert np.array_equal(a.boundary_gt, b.boundary_gt)

    @pytest.mark.parametrize("seed", range(12))
    def test_easy_coverage_contract(self, seed):
        s = generate_scene(seed, 64, "easy")
        assert 0.01 <= s.region_gt.mean() <= 0.60

    @pytest.mark.parametrize("difficulty", ["easy", "textured"])
    def test_image_range_and_shapes(self, difficulty):
        s = generate_scene(0, 64, difficulty)
        assert s.image.shape == (64, 64)
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.region_gt.dtype == bool and s.boundary_gt.dtype == bool

    def test_boundary_is_band_of_region(self):
        s = generate_scene(3, 64)
        t = default_boundary_thickness(64)
        near_edge = dilate(s.region_gt, t) & ~erode(s.region_gt, t)
        assert np.array_equal(s.boundary_gt, near_edge)

    def test_size_guard(self):
        with pytest.raises(ValueError):
            generate_scene(0, 8)

    def test_unknown_difficulty(self):
        with pytest.raises(ValueError):
            generate_scene(0, 64, "nightmare")


class TestBoundaryFromMask:
    def test_empty_mask(self):
        assert not boundary_from_mask(np.zeros((6, 6), dtype=bool), 1).any()

    def test_full_frame_ring(self):
        band = boundary_from_mask(np.ones((6, 6), dtype=bool), 1)
        expect = np.ones((6, 6), dtype=bool)
        expect[1:-1, 1:-1] = False
        assert np.array_equal(band, expect)

    def test_centered_square_ring_has_12_pixels(self):
        m = np.zeros((4, 4), dtype=bool)
        m[1:3, 1:3] = True
        band = boundary_from_mask(m, 1)
        assert int(band.sum()) == 12
        assert not band[0, 0] and not band[0, 3] and not band[3, 0] and not band[3, 3]

    def test_thickness_guard(self):
        with pytest.raises(ValueError):
            boundary_from_mask(np.ones((4, 4)), 0)


class TestPgm:
    def test_binary_mask_roundtrip_exact(self, tmp_path):
        mask = np.random.default_rng(0).random((16, 16)) > 0.5
        path = tmp_path / "m.pgm"
        write_pgm(path, mask.astype(np.float64))
        back = read_pgm(path)
        assert np.array_equal(back >= 0.5, mask)
        assert set(np.unique(back)) <= {0.0, 1.0}

    def test_half_gray_roundtrip_within_quantum(self, tmp_path):
        grid = np.full((8, 8), 0.5)
        path = tmp_path / "g.pgm"
        write_pgm(path, grid)
        assert np.abs(read_pgm(path) - 0.5).max() <= 1.0 / 510.0

    def test_general_roundtrip_bound(self, tmp_path):
        grid = np.random.default_rng(1).random((12, 9))
        path = tmp_path / "r.pgm"
        write_pgm(path, grid)
        assert np.abs(read_pgm(path) - grid).max() <= 1.0 / 510.0

    def test_truncated_file_names_offset(self, tmp_path):
        path = tmp_path / "t.pgm"
        write_pgm(path, np.zeros((4, 4)))
        data = path.read_bytes()
        path.write_bytes(data[:-7])
        with pytest.raises(PgmError, match="byte"):
            read_pgm(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n2 2\n255\n    ")
        with pytest.raises(PgmError, match="P5"):
            read_pgm(path)

    def test_out_of_range_rejected(self, tmp_path):
        with pytest.raises(PgmError):
            write_pgm(tmp_path / "x.pgm", np.full((2, 2), 1.5))


class TestManifest:
    def test_split_counts_64(self):
        assert split_counts(64) == (48, 6, 10)

    def test_split_counts_edges(self):
        assert split_counts(0) == (0, 0, 0)
        for count in (1, 2, 5, 17, 100):
            train, val, test = split_counts(count)
            assert train + val + test == count
            assert train >= 1

    def test_assign_splits_is_permutation(self):
        tags = assign_splits(64, np.random.default_rng(0))
        assert sorted([tags.count("train"), tags.count("val"), tags.count("test")]) == [6, 10, 48]

    def test_dataset_generation_and_reload(self, tmp_path):
        manifest = generate_dataset(tmp_path, seed=5, count=6, size=32)
        entries = read_manifest(manifest)
        assert len(entries) == 6
        samples = load_samples(manifest)
        assert len(samples) == 6
        regen = generate_scene(5, 32)
        assert np.array_equal(samples[0].region_gt, regen.region_gt)
        assert np.abs(samples[0].image - regen.image).max() <= 1.0 / 510.0

    def test_empty_manifest_valid(self, tmp_path):
        path = tmp_path / "manifest.json"
        write_manifest(path, [])
        assert read_manifest(path) == []

    def test_missing_file_rejected_on_read(self, tmp_path):
        manifest = generate_dataset(tmp_path, seed=1, count=3, size=32)
        (tmp_path / "scene_0001_region.pgm").unlink()
        with pytest.raises(ManifestError, match="missing"):
            read_manifest(manifest)

    def test_duplicate_ids_rejected(self, tmp_path):
        write_pgm(tmp_path / "a.pgm", np.zeros((4, 4)))
        entry = {"id": "dup", "image": "a.pgm", "region": "a.pgm",
                 "boundary": "a.pgm", "seed": 0, "split": "train"}
        with pytest.raises(ManifestError, match="duplicate"):
            write_manifest(tmp_path / "manifest.json", [entry, dict(entry)])

    def test_dataset_determinism(self, tmp_path):
        m1 = generate_dataset(tmp_path / "a", seed=9, count=4, size=32)
        m2 = generate_dataset(tmp_path / "b", seed=9, count=4, size=32)
        for e1, e2 in zip(read_manifest(m1), read_manifest(m2)):
            assert e1["split"] == e2["split"]
            b1 = (m1.parent / e1["image"]).read_bytes()
            b2 = (m2.parent / e2["image"]).read_bytes()
            assert b1 == b2


def test_scene_sample_fields():
    s = generate_scene(2, 32)
    assert isinstance(s, SceneSample) and s.seed == 2
