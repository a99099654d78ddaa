import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from feature_exporter.export import ExportError, ExportJob, discover_images, export, main

# the engine package: the exporter's output must load there unchanged
from asvp.features import DatasetManifest, load_features


@pytest.fixture(scope="module")
def image_fixture(tmp_path_factory):
    """12 small images across 3 class directories, deterministic pixels."""
    root = tmp_path_factory.mktemp("dataset")
    rng = np.random.default_rng(7)
    for cls in ("cat", "dog", "fox"):
        d = root / cls
        d.mkdir()
        for i in range(4):
            arr = (rng.random((48, 48, 3)) * 255).astype("uint8")
            Image.fromarray(arr).save(d / f"img_{i}.png")
    return root


def job_for(root, out_prefix, **kw):
    base = dict(dataset_dir=str(root), model_id="resnet18", weights="none",
                batch_size=5, out_prefix=str(out_prefix), seed=3)
    base.update(kw)
    return ExportJob(**base)


class TestDiscovery:
    def test_sorted_paths_and_labels(self, image_fixture):
        paths, labels, classes = discover_images(image_fixture)
        assert classes == ["cat", "dog", "fox"]
        rel = [str(p.relative_to(image_fixture)) for p in paths]
        assert rel == sorted(rel)
        assert labels == [0] * 4 + [1] * 4 + [2] * 4

    def test_empty_dir_rejected(self, tmp_path):
        with pytest.raises(ExportError):
            discover_images(tmp_path)


class TestExport:
    def test_counts_and_manifest(self, image_fixture, tmp_path):
        feat_path, manifest_path = export(job_for(image_fixture, tmp_path / "fix"))
        manifest = json.loads(manifest_path.read_text())
        assert len(manifest["ids"]) == 12
        assert manifest["num_classes"] == 3
        assert manifest["feature_version"] == 0
        blob = feat_path.read_bytes()
        assert blob[:5] == b"ALFV1"
        assert int.from_bytes(blob[5:9], "little") == 12

    def test_acceptance_12_round_trip_into_engine(self, image_fixture, tmp_path):
        feat_path, manifest_path = export(job_for(image_fixture, tmp_path / "rt"))
        manifest = DatasetManifest.from_json(manifest_path.read_text())
        matrix = load_features(feat_path, manifest)
        assert matrix.n == 12
        assert manifest.num_classes == 3
        norms = np.linalg.norm(matrix.data.astype(np.float64), axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-5
        print("\nACCEPTANCE 12: PASS - exported features load in the engine, "
              f"n={matrix.n}, classes={manifest.num_classes}, rows unit-norm")

    def test_deterministic_across_runs(self, image_fixture, tmp_path):
        f1, m1 = export(job_for(image_fixture, tmp_path / "a"))
        bytes1, manifest1 = f1.read_bytes(), m1.read_text()
        f2, m2 = export(job_for(image_fixture, tmp_path / "a", overwrite=True))
        assert f2.read_bytes() == bytes1
        assert m2.read_text() == manifest1

    def test_overwrite_protection(self, image_fixture, tmp_path):
        export(job_for(image_fixture, tmp_path / "ow"))
        with pytest.raises(ExportError):
            export(job_for(image_fixture, tmp_path / "ow"))
        export(job_for(image_fixture, tmp_path / "ow", overwrite=True))

    def test_undecodable_fail_fast_vs_skip(self, image_fixture, tmp_path):
        broken_root = tmp_path / "broken"
        import shutil
        shutil.copytree(image_fixture, broken_root)
        (broken_root / "cat" / "img_0.png").write_bytes(b"not an image")
        with pytest.raises(ExportError):
            export(job_for(broken_root, tmp_path / "ff"))
        feat_path, manifest_path = export(job_for(broken_root, tmp_path / "sk",
                                                  skip_undecodable=True))
        manifest = json.loads(manifest_path.read_text())
        assert len(manifest["ids"]) == 11
        assert "cat/img_0.png" not in manifest["ids"]


class TestCli:
    def test_cli_with_and_without_export_token(self, image_fixture, tmp_path):
        argv = ["--dataset", str(image_fixture), "--model", "resnet18",
                "--weights", "none", "--out", str(tmp_path / "c1"), "--seed", "3"]
        assert main(argv) == 0
        assert main(["export"] + argv[:-2] + ["--out", str(tmp_path / "c2"),
                                              "--seed", "3"]) == 0
        assert (tmp_path / "c1.alfv1").read_bytes() == (tmp_path / "c2.alfv1").read_bytes()

    def test_bad_model_exits_nonzero(self, image_fixture, tmp_path, capsys):
        assert main(["--dataset", str(image_fixture), "--model", "nonexistent-net",
                     "--weights", "none", "--out", str(tmp_path / "x")]) == 1
        assert "nonexistent-net" in capsys.readouterr().err
