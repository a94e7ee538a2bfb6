import json

import numpy as np
import pytest

from meshreg.exceptions import MeshRegError
from meshreg.io import open_dataset, read_centroids, write_centroids
from meshreg.metrics import LABELS
from meshreg.pipeline import load_dataset
from meshreg.synth import eval_warp, gen_reference, write_dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    manifest = write_dataset(root, n_cases=2, first_seed=3)
    return root, manifest


class TestDataset:
    def test_layout(self, dataset):
        root, manifest = dataset
        assert manifest["cases"] == [{"name": "case_0", "seed": 3}, {"name": "case_1", "seed": 4}]
        assert json.loads((root / "manifest.json").read_text()) == manifest
        for f in ("mesh.obj", "mask.rawvol", "planes.csv"):
            assert (root / "ref" / f).is_file()
        for f in ("mask.rawvol", "gt_mesh.obj", "warp.json", "gt_centroids.csv"):
            assert (root / "case_1" / f).is_file()

    def test_round_trip_matches_generator(self, dataset):
        root, _ = dataset
        mask, mesh, rules = gen_reference()
        ds = open_dataset(root)
        rmask, rmesh, rrules = ds.load_reference()
        assert np.array_equal(rmask.data, mask.data)
        assert np.array_equal(rmesh.vertices, mesh.vertices) and np.array_equal(rmesh.faces, mesh.faces)
        assert rrules == rules
        case = ds.cases[0]
        assert np.array_equal(case.gt_mesh().vertices, eval_warp(case.warp(), mesh.vertices))

    def test_load_dataset(self, dataset):
        ref, cases = load_dataset(dataset[0])
        assert [c.name for c in cases] == ["case_0", "case_1"]
        assert set(ref.centroids) == set(LABELS) and set(cases[1].gt_centroids) == set(LABELS)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MeshRegError, match="manifest.json"):
            open_dataset(tmp_path)

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"cases": []}')
        with pytest.raises(MeshRegError, match="malformed"):
            open_dataset(tmp_path)

    def test_missing_folder(self, tmp_path):
        (tmp_path / "ref").mkdir()
        (tmp_path / "manifest.json").write_text('{"reference": "ref", "cases": [{"name": "c", "seed": 0}]}')
        with pytest.raises(MeshRegError, match="does not exist"):
            open_dataset(tmp_path)


class TestCentroidFiles:
    def test_round_trip_exact(self, tmp_path, rng):
        c = {l: rng.normal(size=3) for l in LABELS}
        write_centroids(tmp_path / "c.csv", c)
        back = read_centroids(tmp_path / "c.csv")
        assert list(back) == LABELS or list(back) == list(c)
        assert all(np.array_equal(back[l], c[l]) for l in LABELS)

    def test_bad_row_names_line(self, tmp_path):
        (tmp_path / "c.csv").write_text("label,x,y,z\nSP,1,2,3\nVB,1,oops,3\n")
        with pytest.raises(MeshRegError, match=":3"):
            read_centroids(tmp_path / "c.csv")
