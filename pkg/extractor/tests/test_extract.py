import json
import numpy as np
import pytest

from ccextract import (ColorStatEncoder, ExtractJob, extract_images, extract_texts,
                       get_encoder, letterbox, load_image, render_scene, save_png)
from ccextract.cli import main
from detailfuse import read_image_bank, read_text_bank


@pytest.fixture()
def encoder():
    return ColorStatEncoder(dim=64)


class TestEncoder:
    def test_unit_norm_and_dtype(self, encoder):
        imgs = [render_scene(64, [("red", (8, 8, 40, 40))], seed=s) for s in range(4)]
        feats = encoder.encode_images(imgs)
        assert feats.shape == (4, 64) and feats.dtype == np.float32
        assert np.allclose(np.linalg.norm(feats, axis=1), 1.0, atol=1e-6)

    def test_deterministic(self, encoder):
        img = render_scene(64, [("blue", (0, 0, 30, 30))], seed=7)
        a = encoder.encode_images([img, img])
        assert np.array_equal(a[0], a[1])
        assert np.array_equal(a, ColorStatEncoder(dim=64).encode_images([img, img]))

    def test_text_prompt_template(self, encoder):
        a = encoder.encode_texts(["a photo of a red"])
        b = encoder.encode_texts(["red"])
        assert np.array_equal(a, b)

    def test_text_rejects_unknown_or_ambiguous(self, encoder):
        with pytest.raises(KeyError):
            encoder.encode_texts(["a photo of a dog"])
        with pytest.raises(KeyError):
            encoder.encode_texts(["red or blue"])

    def test_registry(self):
        assert get_encoder("color-stat", dim=32).dim == 32
        with pytest.raises(KeyError):
            get_encoder("clip-vit-l")


class TestLetterbox:
    def test_square_passthrough_shape(self):
        img = render_scene(100, [], seed=0)
        assert letterbox(img, 224).shape == (224, 224, 3)

    def test_wide_image_padded_vertically(self):
        img = np.full((50, 200, 3), 255, dtype=np.uint8)
        out = letterbox(img, 224)
        assert out.shape == (224, 224, 3)
        assert (out[0] == 127).all() and (out[-1] == 127).all()  # pad rows
        mid = out[112]
        assert (mid == 255).sum() > 0                            # content row

    def test_never_crops(self):
        img = np.zeros((30, 300, 3), dtype=np.uint8)
        img[:, :30] = (255, 0, 0)
        img[:, -30:] = (0, 0, 255)
        out = letterbox(img, 224)
        red = (out[..., 0] > 200) & (out[..., 2] < 60)
        blue = (out[..., 2] > 200) & (out[..., 0] < 60)
        assert red.any() and blue.any()


class TestExtract:
    def test_banks_and_sidecar(self, tmp_path, encoder):
        paths = [save_png(render_scene(224, [("green", (10, 10, 80, 80))], seed=i),
                          tmp_path / f"{i}.png") for i in range(3)]
        job = ExtractJob(images=list(enumerate(paths)), k=3, out_dir=tmp_path / "o")
        out = extract_images(job, encoder)
        patches = read_image_bank(out["patches"])
        full = read_image_bank(out["full"])
        assert patches.rows_per_image() == 14
        assert full.rows_per_image() == 1
        side = json.loads(out["sidecar"].read_text())
        assert side["rows_per_image"] == 14 and side["skipped"] == []
        assert side["precision"] == "float32"

    def test_unreadable_image_skipped_and_logged(self, tmp_path, encoder):
        good = save_png(render_scene(64, [], seed=0), tmp_path / "good.png")
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png")
        job = ExtractJob(images=[(0, good), (1, bad)], k=2, out_dir=tmp_path / "o")
        out = extract_images(job, encoder)
        assert read_image_bank(out["patches"]).image_ids == [0]
        side = json.loads(out["sidecar"].read_text())
        assert [e["id"] for e in side["skipped"]] == [1]

    def test_duplicate_ids_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            ExtractJob(images=[(1, "a.png"), (1, "b.png")])

    def test_identical_images_identical_rows(self, tmp_path, encoder):
        p = save_png(render_scene(96, [("navy", (5, 5, 60, 60))], seed=3),
                     tmp_path / "x.png")
        job = ExtractJob(images=[(0, p), (1, p)], k=2, out_dir=tmp_path / "o")
        out = extract_images(job, encoder)
        bank = read_image_bank(out["patches"])
        assert np.array_equal(bank.feats[0], bank.feats[1])

    def test_texts_bank(self, tmp_path, encoder):
        extract_texts([(0, "red"), (1, "teal")], "a photo of a {}", encoder,
                      tmp_path / "t.dfb")
        bank = read_text_bank(tmp_path / "t.dfb")
        assert bank.names == ["red", "teal"]
        assert np.allclose(np.linalg.norm(bank.feats, axis=1), 1.0, atol=1e-3)

    def test_texts_validation(self, tmp_path, encoder):
        with pytest.raises(ValueError):
            extract_texts([], "a photo of a {}", encoder, tmp_path / "t.dfb")
        with pytest.raises(ValueError):
            extract_texts([(0, "red")], "no placeholder", encoder, tmp_path / "t.dfb")


class TestCLI:
    def test_images_and_texts_roundtrip(self, tmp_path, capsys):
        p = save_png(render_scene(64, [("lime", (4, 4, 40, 40))], seed=1),
                     tmp_path / "img.png")
        assert main(["images", "--paths", str(p), "--side", "64", "--k", "2",
                     "--out", str(tmp_path / "o"), "--quiet"]) == 0
        assert read_image_bank(tmp_path / "o" / "patches.dfb").rows_per_image() == 5
        assert main(["texts", "--classes", "red,blue", "--out",
                     str(tmp_path / "t.dfb"), "--quiet"]) == 0
        assert read_text_bank(tmp_path / "t.dfb").names == ["red", "blue"]

    def test_manifest_input(self, tmp_path):
        p = save_png(render_scene(64, [], seed=0), tmp_path / "a.png")
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps({"images": [{"id": 42, "path": str(p)}]}))
        assert main(["images", "--manifest", str(manifest), "--side", "64",
                     "--k", "2", "--out", str(tmp_path / "o"), "--quiet"]) == 0
        assert read_image_bank(tmp_path / "o" / "patches.dfb").image_ids == [42]

    def test_unknown_class_exit_code(self, tmp_path):
        assert main(["texts", "--classes", "zebra", "--out",
                     str(tmp_path / "t.dfb"), "--quiet"]) == 2

    def test_all_images_unreadable_exit_code(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"junk")
        assert main(["images", "--paths", str(bad), "--side", "64", "--k", "2",
                     "--out", str(tmp_path / "o"), "--quiet"]) == 1
