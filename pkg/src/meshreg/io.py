"""On-disk layout of synthetic datasets: ``ref/``, ``case_<k>/`` and ``manifest.json``."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import MeshRegError
from .mesh import read_obj, write_obj
from .metrics import label_by_planes, read_plane_rules, region_centroids, write_plane_rules
from .volio import read_volume, write_volume

REF_MESH = "mesh.obj"
REF_MASK = "mask.rawvol"
REF_PLANES = "planes.csv"
CASE_MASK = "mask.rawvol"
CASE_MESH = "gt_mesh.obj"
CASE_WARP = "warp.json"
CASE_CENTROIDS = "gt_centroids.csv"


def write_reference(folder, mask, mesh, rules):
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    write_obj(mesh, folder / REF_MESH)
    write_volume(mask, folder / REF_MASK)
    write_plane_rules(folder / REF_PLANES, rules)


def read_reference(folder):
    """(mask, mesh, rules) as written by :func:`write_reference`."""
    folder = Path(folder)
    return (
        read_volume(folder / REF_MASK),
        read_obj(folder / REF_MESH),
        read_plane_rules(folder / REF_PLANES),
    )


def write_centroids(path, centroids):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "x", "y", "z"])
        for lab, p in centroids.items():
            w.writerow([lab, *(repr(float(c)) for c in p)])


def read_centroids(path):
    path = Path(path)
    out = {}
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                out[row["label"]] = np.array([float(row[k]) for k in ("x", "y", "z")])
            except (KeyError, TypeError, ValueError):
                raise MeshRegError(f"{path}:{lineno}: bad centroid row {row}") from None
    return out


def write_case(folder, case, reference_mesh, rules):
    """Mask, ground-truth mesh, warp parameters and ground-truth region centroids.

    Centroids average the warped member vertices of each region, with
    regions taken from the reference labelling.
    """
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    write_volume(case.mask, folder / CASE_MASK)
    write_obj(case.gt_mesh, folder / CASE_MESH)
    (folder / CASE_WARP).write_text(json.dumps(case.warp.to_dict(), indent=2) + "\n")
    labeling = label_by_planes(reference_mesh, rules)
    write_centroids(folder / CASE_CENTROIDS, region_centroids(case.gt_mesh, labeling))


@dataclass
class CaseFiles:
    name: str
    seed: int
    folder: Path

    def mask(self):
        return read_volume(self.folder / CASE_MASK)

    def gt_mesh(self):
        return read_obj(self.folder / CASE_MESH)

    def warp(self):
        from .synth import WarpSpec

        return WarpSpec.from_dict(json.loads((self.folder / CASE_WARP).read_text()))

    def centroids(self):
        return read_centroids(self.folder / CASE_CENTROIDS)


@dataclass
class Dataset:
    root: Path
    reference: Path
    cases: list

    def load_reference(self):
        return read_reference(self.reference)


def open_dataset(root):
    """Read ``manifest.json`` and check that every listed folder exists."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise MeshRegError(f"{manifest_path}: file not found")
    try:
        manifest = json.loads(manifest_path.read_text())
        ref = root / manifest["reference"]
        cases = [CaseFiles(c["name"], int(c["seed"]), root / c["name"]) for c in manifest["cases"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MeshRegError(f"{manifest_path}: malformed manifest ({exc})") from None
    for folder in [ref] + [c.folder for c in cases]:
        if not folder.is_dir():
            raise MeshRegError(f"{manifest_path}: listed folder {folder} does not exist")
    return Dataset(root, ref, cases)

