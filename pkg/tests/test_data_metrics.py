"""Image I/O, dataset ingestion, synthetic degradation, and PSNR/SSIM."""
import numpy as np
import pytest
from PIL import Image

from mambauie.data import (Dataset, load_dataset, load_image, read_split_list,
                           save_image, synth_degrade, _box_blur3)
from mambauie.metrics import PSNR_CAP, psnr, ssim

from conftest import procedural_image, write_png_dataset
from oracles import psnr_ref, ssim_ref


class TestImageIO:
    def test_round_trip_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        raw = rng.integers(0, 256, size=(8, 6, 3), dtype=np.uint8)
        src = tmp_path / "a.png"
        Image.fromarray(raw, mode="RGB").save(src)
        loaded = load_image(src)
        assert loaded.shape == (3, 8, 6)
        dst = tmp_path / "b.png"
        save_image(loaded, dst)
        np.testing.assert_array_equal(np.asarray(Image.open(dst)), raw)

    def test_byte_scale_endpoints(self, tmp_path):
        arr = np.zeros((2, 2, 3), dtype=np.uint8)
        arr[0, 0] = 255
        path = tmp_path / "x.png"
        Image.fromarray(arr, mode="RGB").save(path)
        loaded = load_image(path)
        assert loaded[0, 0, 0] == 1.0
        assert loaded[0, 1, 1] == 0.0

    def test_half_rounds_up(self, tmp_path):
        img = np.full((3, 4, 4), 0.5, dtype=np.float32)  # 127.5 -> byte 128
        path = tmp_path / "half.png"
        save_image(img, path)
        assert np.all(np.asarray(Image.open(path)) == 128)

    def test_save_clamps(self, tmp_path):
        img = np.array([[[-1.0]], [[0.5]], [[2.0]]])
        path = tmp_path / "clamp.png"
        save_image(img, path)
        np.testing.assert_array_equal(np.asarray(Image.open(path)).ravel(),
                                      [0, 128, 255])

    def test_non_rgb_rejected(self, tmp_path):
        path = tmp_path / "gray.png"
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(path)
        with pytest.raises(ValueError, match="RGB"):
            load_image(path)


class TestLoadDataset:
    def _tree(self, tmp_path, stems, size=16):
        from mambauie.data import ImagePair
        pairs = [ImagePair(raw=procedural_image(i, size),
                           reference=procedural_image(i + 50, size),
                           id=stem)
                 for i, stem in enumerate(stems)]
        write_png_dataset(tmp_path, pairs)
        return pairs

    def test_lexicographic_pairing(self, tmp_path):
        self._tree(tmp_path, ["c", "a", "b"])
        ds = load_dataset(tmp_path)
        assert [p.id for p in ds.pairs] == ["a", "b", "c"]

    def test_unmatched_stem_skipped_and_reported(self, tmp_path):
        self._tree(tmp_path, ["a", "b"])
        (tmp_path / "raw" / "orphan.png").write_bytes(
            (tmp_path / "raw" / "a.png").read_bytes())
        ds = load_dataset(tmp_path)
        assert [p.id for p in ds.pairs] == ["a", "b"]
        assert any("orphan" in msg for msg in ds.skipped)

    def test_extent_mismatch_skipped(self, tmp_path):
        self._tree(tmp_path, ["a", "b"])
        save_image(procedural_image(9, 24), tmp_path / "reference" / "a.png")
        ds = load_dataset(tmp_path)
        assert [p.id for p in ds.pairs] == ["b"]
        assert any("extent" in msg for msg in ds.skipped)

    def test_split_list_890_into_800_train_90_test(self, tmp_path):
        stems = [f"im{i:04d}" for i in range(890)]
        rng = np.random.default_rng(0)
        img = (rng.random((8, 8, 3)) * 255).astype(np.uint8)
        (tmp_path / "raw").mkdir()
        (tmp_path / "reference").mkdir()
        for s in stems:
            for sub in ("raw", "reference"):
                Image.fromarray(img, mode="RGB").save(tmp_path / sub / f"{s}.png")
        train_list = tmp_path / "train.txt"
        train_list.write_text("\n".join(stems[:800]) + "\n")
        test_list = tmp_path / "test.txt"
        test_list.write_text("\n".join(stems[800:]) + "\n")
        train = load_dataset(tmp_path, stems=read_split_list(train_list))
        test = load_dataset(tmp_path, stems=read_split_list(test_list),
                            split="test")
        assert len(train) == 800
        assert len(test) == 90
        assert not set(p.id for p in train.pairs) & set(p.id for p in test.pairs)

    def test_missing_folders(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope")

    def test_empty_intersection(self, tmp_path):
        (tmp_path / "raw").mkdir()
        (tmp_path / "reference").mkdir()
        with pytest.raises(ValueError):
            load_dataset(tmp_path)


class TestSynthDegrade:
    def test_unit_attenuation_is_pure_blur(self):
        clean = procedural_image(0, 16)
        degraded = synth_degrade(clean, seed=1, attenuation=[1.0, 1.0, 1.0])
        want = np.clip(_box_blur3(clean), 0.0, 1.0)
        np.testing.assert_allclose(degraded, want, atol=1e-6)

    def test_strictly_lowers_fidelity(self):
        clean = procedural_image(3, 32)
        degraded = synth_degrade(clean, seed=2)
        assert psnr(degraded, clean) < PSNR_CAP
        assert psnr(degraded, clean) < 40.0

    def test_deterministic_per_seed(self):
        clean = procedural_image(4, 16)
        a = synth_degrade(clean, seed=5)
        b = synth_degrade(clean, seed=5)
        np.testing.assert_array_equal(a, b)
        c = synth_degrade(clean, seed=6)
        assert np.any(a != c)

    def test_red_attenuated_most(self):
        clean = np.full((3, 16, 16), 0.8, dtype=np.float32)
        degraded = synth_degrade(clean, seed=7, attenuation=None)
        # red loses more signal than green/blue under the absorption model
        assert degraded[0].mean() < degraded[1].mean()
        assert degraded[0].mean() < degraded[2].mean()

    def test_output_in_range(self):
        degraded = synth_degrade(procedural_image(8, 16), seed=9)
        assert degraded.min() >= 0.0 and degraded.max() <= 1.0


class TestPSNR:
    def test_mse_001_is_20db(self):
        a = np.zeros((3, 10, 10))
        b = np.full((3, 10, 10), 0.1)
        assert abs(psnr(a, b) - 20.0) < 1e-9

    def test_identical_hits_cap(self):
        x = procedural_image(0, 16)
        assert psnr(x, x) == PSNR_CAP

    def test_matches_definition_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a = rng.random((3, 12, 12))
            b = rng.random((3, 12, 12))
            assert abs(psnr(a, b) - psnr_ref(a, b)) < 1e-9

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((2, 3, 8, 8))
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_under_growing_noise(self):
        clean = procedural_image(1, 16)
        rng = np.random.default_rng(3)
        noise = rng.standard_normal(clean.shape)
        values = [psnr(np.clip(clean + amp * noise, 0, 1), clean)
                  for amp in (0.01, 0.05, 0.1, 0.2)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestSSIM:
    def test_self_similarity_is_one(self):
        x = procedural_image(0, 16)
        assert abs(ssim(x, x) - 1.0) < 1e-9

    def test_anticorrelated_structure_is_negative(self):
        x = np.zeros((3, 16, 16))
        x[:, :, 8:] = 1.0  # half black, half white
        assert ssim(x, 1.0 - x) < 0.0

    def test_matches_wang_formula_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(3):
            a = rng.random((3, 14, 14))
            b = rng.random((3, 14, 14))
            assert abs(ssim(a, b) - ssim_ref(a, b)) < 1e-6

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((2, 3, 16, 16))
        assert abs(ssim(a, b) - ssim(b, a)) < 1e-12

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))

    def test_requires_rgb_layout(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((1, 16, 16)), np.zeros((1, 16, 16)))
