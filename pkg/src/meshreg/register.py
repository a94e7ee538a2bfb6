"""Correspondences induced by shared vertex identity, and point mapping through them."""

from __future__ import annotations

import csv
import json
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import MeshError
from .spatial import SurfaceLocator

PROVENANCES = ("ref_to_target", "pairwise")


class CorrespondenceSet:
    """Ordered pairs ``(src[i], dst[i])`` plus the reference triangles over them."""

    def __init__(self, src, dst, faces, provenance="ref_to_target"):
        src = np.array(src, dtype=np.float64).reshape(-1, 3)
        dst = np.array(dst, dtype=np.float64).reshape(-1, 3)
        if src.shape != dst.shape:
            raise MeshError(f"source/destination length mismatch: {len(src)} vs {len(dst)}")
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        for a in (src, dst):
            a.flags.writeable = False
        self.src = src
        self.dst = dst
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        self.provenance = provenance

    def __len__(self):
        return len(self.src)

    @property
    def displacements(self):
        return self.dst - self.src

    @cached_property
    def _locator(self):
        return SurfaceLocator(self.src, self.faces)

    @cached_property
    def _tree(self):
        return cKDTree(self.src)

    @cached_property
    def mean_edge_length(self):
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        return float(np.linalg.norm(self.src[e[:, 0]] - self.src[e[:, 1]], axis=1).mean())

    def to_csv(self, path, reference_path=None):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["src_x", "src_y", "src_z", "dst_x", "dst_y", "dst_z"])
            for s, d in zip(self.src, self.dst):
                w.writerow([repr(float(x)) for x in (*s, *d)])
        sidecar = {"provenance": self.provenance, "n_pairs": len(self)}
        if reference_path is not None:
            sidecar["reference_mesh"] = str(reference_path)
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def ref_to_target(reference, disp):
    vec = getattr(disp, "vectors", disp)
    vec = np.asarray(vec, dtype=np.float64)
    if len(vec) != reference.n_vertices:
        raise MeshError(f"{len(vec)} displacements for {reference.n_vertices} reference vertices")
    return CorrespondenceSet(reference.vertices, reference.vertices + vec, reference.faces, "ref_to_target")


def compose_pair(disp1, disp2, reference):
    """Pairs ``(v + d1, v + d2)``: image t1 to image t2 through the shared reference."""
    d1 = np.asarray(getattr(disp1, "vectors", disp1), dtype=np.float64)
    d2 = np.asarray(getattr(disp2, "vectors", disp2), dtype=np.float64)
    n = reference.n_vertices
    if len(d1) != n or len(d2) != n:
        raise MeshError(f"displacement fields ({len(d1)}, {len(d2)}) do not match the reference ({n} vertices)")
    v = reference.vertices
    return CorrespondenceSet(v + d1, v + d2, reference.faces, "pairwise")


def interpolate_phi(corr, points, cutoff=None, k=8, power=2.0):
    """Map query points through a correspondence set.

    Queries within ``cutoff`` of the source surface take the barycentric
    blend of the three destination vertices of the nearest source triangle
    and keep their offset from that triangle unchanged. Farther queries use
    inverse-distance weighting of the ``k`` nearest vertex displacements.
    ``cutoff`` defaults to three times the mean source edge length.
    """
    if len(corr) == 0:
        raise MeshError("empty correspondence set")
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = np.empty_like(pts)
    if len(pts) == 0:
        return out.reshape(0, 3)
    if cutoff is None:
        cutoff = 3.0 * corr.mean_edge_length if len(corr.faces) else 0.0
    if len(corr.faces):
        dist, face, closest, bary = corr._locator.query(pts)
        near = dist <= cutoff
    else:
        near = np.zeros(len(pts), dtype=bool)
    if near.any():
        tri = corr.faces[face[near]]
        b = bary[near]
        dst = np.einsum("ij,ijk->ik", b, corr.dst[tri])
        out[near] = dst + (pts[near] - closest[near])
    far = ~near
    if far.any():
        kk = min(k, len(corr))
        d, idx = corr._tree.query(pts[far], k=kk)
        d = d.reshape(-1, kk)
        idx = idx.reshape(-1, kk)
        disp = corr.displacements
        w = np.zeros_like(d)
        exact = d[:, 0] == 0
        w[exact, 0] = 1.0
        w[~exact] = 1.0 / d[~exact] ** power
        w /= w.sum(axis=1, keepdims=True)
        out[far] = pts[far] + np.einsum("ij,ijk->ik", w, disp[idx])
    return out[0] if single else out


def map_points(corr, points, **kw):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros((0, 3))
    return interpolate_phi(corr, pts, **kw)


def read_points_csv(path):
    """Points CSV with columns ``x,y,z`` (extra columns are ignored)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"x", "y", "z"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing column(s) {sorted(missing)}")
        pts = []
        for lineno, row in enumerate(reader, 2):
            try:
                pts.append([float(row["x"]), float(row["y"]), float(row["z"])])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: cannot parse point {row}") from None
    return np.array(pts, dtype=np.float64).reshape(-1, 3)


def write_points_csv(path, points, labels=None):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z"] + (["label"] if labels is not None else []))
        for i, p in enumerate(np.asarray(points).reshape(-1, 3)):
            row = [repr(float(c)) for c in p]
            if labels is not None:
                row.append(labels[i])
            w.writerow(row)
