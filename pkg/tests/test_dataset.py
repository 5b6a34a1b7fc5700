"""Image IO, synthetic generators, and manifests."""

import numpy as np
import pytest

from mppfv.dataset import (DatasetManifest, ManifestRecord, load_image,
                           planted_square, read_pnm, synth_image,
                           synthetic_manifest, write_pnm)
from mppfv.errors import InputError


class TestPnm:
    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((1, 9, 7)).astype(np.float32)
        path = tmp_path / "img.pgm"
        write_pnm(path, img)
        back = read_pnm(path)
        assert back.shape == (1, 9, 7)
        np.testing.assert_allclose(back, img, atol=1.0 / 255.0)

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.random((3, 5, 6)).astype(np.float32)
        path = tmp_path / "img.ppm"
        write_pnm(path, img)
        back = read_pnm(path)
        assert back.shape == (3, 5, 6)
        np.testing.assert_allclose(back, img, atol=1.0 / 255.0)

    def test_ascii_pgm_with_comment(self, tmp_path):
        path = tmp_path / "ascii.pgm"
        path.write_text("P2\n# a comment\n3 2\n255\n0 128 255\n64 32 16\n")
        img = read_pnm(path)
        assert img.shape == (1, 2, 3)
        assert img[0, 0, 1] == pytest.approx(128 / 255)

    def test_rejects_non_pnm(self, tmp_path):
        path = tmp_path / "nope.bin"
        path.write_bytes(b"GIF89a")
        with pytest.raises(InputError):
            read_pnm(path)


class TestSynthetic:
    def test_generators_are_seed_deterministic(self):
        for kind in ("blob", "hstripes", "checker", "boxed", "plain"):
            a = synth_image(kind, seed=5, size=64, noise=0.3)
            b = synth_image(kind, seed=5, size=64, noise=0.3)
            assert a.shape == (1, 64, 64)
            np.testing.assert_array_equal(a, b)
            assert a.min() >= 0.0 and a.max() <= 1.0

    def test_unknown_kind_rejected(self):
        with pytest.raises(InputError):
            synth_image("nebula", seed=0)

    def test_planted_square_rect_matches_bright_region(self):
        img, (x0, y0, x1, y1) = planted_square(seed=3, size=64, noise=0.0)
        bright = img[0] > 0.9
        ys, xs = np.nonzero(bright)
        assert xs.min() / 64 >= x0 - 0.02 and (xs.max() + 1) / 64 <= x1 + 0.02
        assert ys.min() / 64 >= y0 - 0.02 and (ys.max() + 1) / 64 <= y1 + 0.02

    def test_noise_washes_out_fine_detail_but_not_coarse(self):
        # The downsampled (coarse) views of two classes stay separated while
        # the native-resolution pixels are noise-dominated.
        from mppfv.pyramid import resize_bilinear

        a = synth_image("blob", seed=1, size=128, noise=0.5)
        b = synth_image("hstripes", seed=2, size=128, noise=0.5)
        a_small = resize_bilinear(a, 32, 32)
        clean = synth_image("blob", seed=1, size=128, noise=0.0)
        clean_small = resize_bilinear(clean, 32, 32)
        coarse_err = float(np.abs(a_small - clean_small).mean())
        fine_err = float(np.abs(a - clean).mean())
        assert coarse_err < 0.35 * fine_err


class TestManifest:
    def test_round_trip(self, tmp_path):
        manifest = synthetic_manifest(n_train=2, n_test=1, seed=4, noise=0.2)
        path = tmp_path / "manifest.json"
        manifest.save(path)
        loaded = DatasetManifest.load(path)
        assert loaded.classes == ["blob", "checker", "hstripes"]
        assert len(loaded.split("train")) == 6
        assert len(loaded.split("test")) == 3
        assert loaded.records == manifest.records

    def test_synthetic_sources_materialize(self):
        manifest = synthetic_manifest(n_train=1, n_test=1, size=48)
        img = load_image(manifest.records[0].source)
        assert img.shape == (1, 48, 48)

    def test_file_sources_materialize(self, tmp_path):
        img = synth_image("blob", seed=0, size=32)
        write_pnm(tmp_path / "x.pgm", img)
        loaded = load_image("file:x.pgm", tmp_path)
        np.testing.assert_allclose(loaded, img, atol=1.0 / 255.0)

    def test_split_and_label_validation(self):
        with pytest.raises(InputError):
            ManifestRecord("synthetic:blob", "validation", ("a",))
        with pytest.raises(InputError):
            ManifestRecord("synthetic:blob", "train", ())
        with pytest.raises(InputError):
            DatasetManifest([ManifestRecord("synthetic:blob", "train", ("a",))])
