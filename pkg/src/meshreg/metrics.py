"""Sub-region labelling and registration metrics (TRE, HD, ASSD, Dice)."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import MeshError
from .spatial import SurfaceLocator

LABELS = ("SP", "LL", "RL", "LAP", "RAP", "LTP", "RTP", "LP", "RP", "VB")


@dataclass(frozen=True)
class PlaneRule:
    point: tuple
    normal: tuple
    label: str

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal must be non-zero")
        if abs(norm - 1) > 1e-9:
            object.__setattr__(self, "normal", tuple(n / norm))
        if self.label not in LABELS:
            raise ValueError(f"unknown region label {self.label!r}")

    def side(self, points):
        return (np.asarray(points) - np.asarray(self.point)) @ np.asarray(self.normal)


def label_by_planes(mesh, rules, default_label="VB"):
    """First rule with ``(v - point) . normal > 0`` wins; unmatched vertices get the default."""
    verts = mesh.vertices if hasattr(mesh, "vertices") else np.asarray(mesh)
    labels = np.full(len(verts), default_label, dtype=object)
    free = np.ones(len(verts), dtype=bool)
    for rule in rules:
        hit = free & (rule.side(verts) > 0)
        labels[hit] = rule.label
        free &= ~hit
    return labels


def region_centroid(mesh, labeling, label):
    verts = mesh.vertices if hasattr(mesh, "vertices") else np.asarray(mesh)
    sel = np.asarray(labeling) == label
    if not sel.any():
        raise MeshError(f"region {label!r} has no vertices")
    return verts[sel].mean(axis=0)


def region_centroids(mesh, labeling, labels=LABELS):
    return {lab: region_centroid(mesh, labeling, lab) for lab in labels}


def tre(mapped, gt):
    return float(np.linalg.norm(np.asarray(mapped, dtype=np.float64) - np.asarray(gt, dtype=np.float64)))


def tre_batch(mapped, gt):
    return np.linalg.norm(np.asarray(mapped, dtype=np.float64) - np.asarray(gt, dtype=np.float64), axis=-1)


def _directed(a, b):
    if a.n_vertices == 0 or b.n_faces == 0:
        raise MeshError("surface distance needs non-empty meshes")
    d, *_ = SurfaceLocator(b.vertices, b.faces).query(a.vertices)
    return d


def surface_distances(a, b):
    """Vertex-to-surface distances of a's vertices to b and of b's vertices to a."""
    return _directed(a, b), _directed(b, a)


def hausdorff(a, b):
    dab, dba = surface_distances(a, b)
    return float(max(dab.max(), dba.max()))


def assd(a, b):
    dab, dba = surface_distances(a, b)
    return float((dab.sum() + dba.sum()) / (len(dab) + len(dba)))


def dice(a, b):
    """``2|A & B| / (|A| + |B|)``; two empty masks score 1."""
    if hasattr(a, "same_geometry") and not a.same_geometry(b):
        raise ValueError("dice: masks have different grid geometry")
    x = np.asarray(getattr(a, "data", a)) > 0
    y = np.asarray(getattr(b, "data", b)) > 0
    if x.shape != y.shape:
        raise ValueError(f"dice: shape mismatch {x.shape} vs {y.shape}")
    total = int(x.sum()) + int(y.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(x, y).sum()) / total


def region_submesh(mesh, labeling, label):
    """Faces with at least two vertices in the region."""
    sel = (np.asarray(labeling) == label)[mesh.faces].sum(axis=1) >= 2
    return mesh.submesh(sel)


@dataclass
class MetricsReport:
    """Per-region rows plus whole-mesh HD/ASSD and Dice for one case."""

    case: str
    tre: dict
    hd: dict
    assd: dict
    dice: float
    extra: dict = field(default_factory=dict)

    def mean_tre(self):
        return float(np.mean(list(self.tre.values())))

    def rows(self):
        out = []
        for lab in self.tre:
            out.append({
                "case": self.case,
                "region": lab,
                "tre_mm": self.tre[lab],
                "hd_mm": self.hd.get(lab, float("nan")),
                "assd_mm": self.assd.get(lab, float("nan")),
                "dice": float("nan"),
            })
        out.append({
            "case": self.case,
            "region": "ALL",
            "tre_mm": self.mean_tre(),
            "hd_mm": self.hd["ALL"],
            "assd_mm": self.assd["ALL"],
            "dice": self.dice,
        })
        return out


def evaluate_case(case, labeling, mapped_points, gt_points, pred_mesh, gt_mesh,
                  pred_mask=None, gt_mask=None, labels=LABELS):
    """Assemble TRE per region, HD/ASSD per region and whole mesh, and Dice.

    ``pred_mesh`` and ``gt_mesh`` share connectivity and ``labeling``.
    """
    tres = {lab: tre(mapped_points[lab], gt_points[lab]) for lab in labels}
    hd, sd = {}, {}
    for lab in labels:
        pa = region_submesh(pred_mesh, labeling, lab)
        pb = region_submesh(gt_mesh, labeling, lab)
        if pa.n_faces == 0 or pb.n_faces == 0:
            hd[lab] = sd[lab] = float("nan")
            continue
        dab, dba = surface_distances(pa, pb)
        hd[lab] = float(max(dab.max(), dba.max()))
        sd[lab] = float((dab.sum() + dba.sum()) / (len(dab) + len(dba)))
    dab, dba = surface_distances(pred_mesh, gt_mesh)
    hd["ALL"] = float(max(dab.max(), dba.max()))
    sd["ALL"] = float((dab.sum() + dba.sum()) / (len(dab) + len(dba)))
    dsc = dice(pred_mask, gt_mask) if pred_mask is not None and gt_mask is not None else float("nan")
    return MetricsReport(case, tres, hd, sd, dsc)


METRIC_COLUMNS = ("case", "region", "tre_mm", "hd_mm", "assd_mm", "dice")


def aggregate(reports, labels=LABELS):
    """Mean and std across cases per region, in the column layout of the per-case rows."""
    rows = []
    for lab in list(labels) + ["ALL"]:
        vals = {k: [] for k in ("tre_mm", "hd_mm", "assd_mm", "dice")}
        for rep in reports:
            for r in rep.rows():
                if r["region"] == lab:
                    for k in vals:
                        vals[k].append(r[k])
        for stat, fn in (("mean", np.nanmean), ("std", np.nanstd)):
            row = {"case": stat, "region": lab}
            for k, v in vals.items():
                arr = np.asarray(v, dtype=np.float64)
                row[k] = float(fn(arr)) if np.isfinite(arr).any() else float("nan")
            rows.append(row)
    return rows


def write_metrics_csv(path, reports, with_aggregate=True):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for rep in reports:
            for row in rep.rows():
                w.writerow(_fmt(row))
        if with_aggregate:
            for row in aggregate(reports):
                w.writerow(_fmt(row))


def _fmt(row):
    return {k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()}


def read_plane_rules(path):
    rules = []
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                rules.append(PlaneRule(
                    (float(row["px"]), float(row["py"]), float(row["pz"])),
                    (float(row["nx"]), float(row["ny"]), float(row["nz"])),
                    row["label"].strip(),
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad plane rule ({exc})") from None
    return rules


def write_plane_rules(path, rules):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["px", "py", "pz", "nx", "ny", "nz", "label"])
        for r in rules:
            w.writerow([*(repr(float(x)) for x in r.point), *(repr(float(x)) for x in r.normal), r.label])
