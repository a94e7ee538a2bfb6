"""Synthetic vertebra-like cases with analytically known warps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import MeshRegError
from .mesh import TriMesh, laplacian_smooth
from .metrics import PlaneRule
from .volume import VoxelGrid, marching_cubes, voxelize

SPACING = 0.5
MARGIN_MM = 4.0

# (center, radii) of the vertebral body
_BODY = ((0.0, 8.0, 0.0), (9.0, 6.5, 5.5))
# capsules: (start, end, radius); left parts are mirrored in x
_RIGHT_CAPSULES = [
    ((4.0, 3.0, 0.0), (6.0, -3.0, 0.0), 2.2),   # pedicle
    ((6.5, -4.0, 0.0), (7.0, -5.0, 8.0), 1.8),  # superior articular process
    ((6.5, -3.5, 0.0), (17.0, -5.0, 0.0), 1.7),  # transverse process
    ((6.0, -4.0, 0.0), (5.0, -10.0, 0.0), 1.9),  # lamina, lateral half
    ((5.0, -10.0, 0.0), (0.0, -12.0, 0.0), 1.9),  # lamina, medial half
]
_SPINOUS = ((0.0, -12.0, 0.0), (0.0, -22.0, -3.0), 2.0)


def _capsules():
    caps = []
    for a, b, r in _RIGHT_CAPSULES:
        caps.append((np.array(a), np.array(b), r))
        caps.append((np.array(a) * [-1, 1, 1], np.array(b) * [-1, 1, 1], r))
    caps.append((np.array(_SPINOUS[0]), np.array(_SPINOUS[1]), _SPINOUS[2]))
    return caps


def vertebra_inside(points):
    """Membership test for the composite solid (mm, reference frame)."""
    p = np.asarray(points, dtype=np.float64)
    c, r = np.array(_BODY[0]), np.array(_BODY[1])
    inside = np.sum(((p - c) / r) ** 2, axis=1) <= 1.0
    for a, b, rad in _capsules():
        ab = b - a
        t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
        d = p - (a + t[:, None] * ab)
        inside |= np.einsum("ij,ij->i", d, d) <= rad * rad
    return inside


def _unit(*v):
    v = np.array(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def reference_plane_rules():
    """Nine cutting planes, applied as a decision list with VB as the remainder.

    Each plane sits at the join between a protruding part and the rest of
    the solid; later rules only see vertices not claimed by earlier ones.
    """
    def rule(n, c, label):
        n = _unit(*n)
        return PlaneRule(tuple(n * c), tuple(n), label)

    return [
        rule((0, -1, 0), 13.5, "SP"),
        rule((1, 0, 0), 10.0, "RTP"),
        rule((-1, 0, 0), 10.0, "LTP"),
        rule((1, -1, -1), 12.5 / np.sqrt(3), "RL"),
        rule((-1, -1, -1), 12.5 / np.sqrt(3), "LL"),
        rule((1, -1, 1), 13.5 / np.sqrt(3), "RAP"),
        rule((-1, -1, 1), 13.5 / np.sqrt(3), "LAP"),
        rule((1, -1, 0), 3.5 / np.sqrt(2), "RP"),
        rule((-1, -1, 0), 3.5 / np.sqrt(2), "LP"),
    ]


def _grid_around(lo, hi, spacing=SPACING, margin=MARGIN_MM):
    lo = np.floor((np.asarray(lo) - margin) / spacing) * spacing
    hi = np.ceil((np.asarray(hi) + margin) / spacing) * spacing
    dims = tuple(int(round(d)) + 1 for d in (hi - lo) / spacing)
    return VoxelGrid(np.zeros(dims, dtype=np.uint8), (spacing,) * 3, tuple(lo))


def gen_reference(seed=0, smooth_iters=10, smooth_factor=0.2):
    """Rasterised reference solid, its smoothed surface mesh and plane rules.

    The shape is deterministic; ``seed`` is accepted for interface symmetry
    with the case generator and recorded in manifests.
    """
    lo = np.array([-19.0, -24.5, -6.0])
    hi = np.array([19.0, 15.0, 10.0])
    grid = _grid_around(lo, hi)
    X, Y, Z = np.meshgrid(*grid.voxel_centers(), indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    mask = grid.like(vertebra_inside(pts).reshape(grid.dims).astype(np.uint8))
    mesh = laplacian_smooth(marching_cubes(mask), smooth_iters, smooth_factor)
    if not mesh.is_watertight():
        raise MeshRegError("reference surface is not watertight")
    return mask, mesh, reference_plane_rules()


# -- warps -------------------------------------------------------------------

@dataclass
class WarpSpec:
    """``w(p) = A p + t + sum_a amp[a] * sin(2 pi freq[a] . p + phase[a]) e_a``."""

    matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frequency: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    phase: np.ndarray = field(default_factory=lambda: np.zeros(3))
    seed: int = -1

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64).reshape(3)
        self.frequency = np.asarray(self.frequency, dtype=np.float64).reshape(3, 3)
        self.phase = np.asarray(self.phase, dtype=np.float64).reshape(3)

    def to_dict(self):
        return {
            "matrix": self.matrix.tolist(),
            "translation": self.translation.tolist(),
            "amplitude": self.amplitude.tolist(),
            "frequency": self.frequency.tolist(),
            "phase": self.phase.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def eval_warp(spec, points):
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    arg = 2 * np.pi * p @ spec.frequency.T + spec.phase
    out = p @ spec.matrix.T + spec.translation + spec.amplitude * np.sin(arg)
    return out[0] if single else out


def warp_jacobian(spec, points):
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    arg = 2 * np.pi * p @ spec.frequency.T + spec.phase
    coef = spec.amplitude * np.cos(arg) * 2 * np.pi  # (n, 3)
    return spec.matrix[None] + coef[:, :, None] * spec.frequency[None]


def _rotation(axis, angle):
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def random_warp(seed, max_scale_dev=0.1, max_rotation_deg=15.0, max_translation=10.0,
                max_amplitude=4.0, min_wavelength=40.0):
    """Draw a warp with the default magnitudes; amplitudes are chosen per axis."""
    rng = np.random.default_rng(seed)
    scale = rng.uniform(1 - max_scale_dev, 1 + max_scale_dev, 3)
    rot = _rotation(rng.normal(size=3), np.deg2rad(rng.uniform(0, max_rotation_deg)))
    t_dir = rng.normal(size=3)
    translation = t_dir / np.linalg.norm(t_dir) * rng.uniform(0, max_translation)
    amplitude = rng.uniform(0, max_amplitude, 3)
    freq = rng.normal(size=(3, 3))
    freq /= np.linalg.norm(freq, axis=1, keepdims=True)
    freq *= (1.0 / rng.uniform(min_wavelength, 2 * min_wavelength, 3))[:, None]
    phase = rng.uniform(0, 2 * np.pi, 3)
    return WarpSpec(rot @ np.diag(scale), translation, amplitude, freq, phase, seed=int(seed))


def check_warp(spec, lo, hi, n_samples=2000, seed=0):
    """Minimum Jacobian determinant over random points in a box."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n_samples, 3))
    return float(np.linalg.det(warp_jacobian(spec, pts)).min())


def warp_rules(rules, spec):
    """Map rule points through the warp; normals follow the local inverse-transpose Jacobian."""
    out = []
    for r in rules:
        p = np.asarray(r.point)
        J = warp_jacobian(spec, p)[0]
        n = np.linalg.solve(J.T, np.asarray(r.normal))
        out.append(PlaneRule(tuple(eval_warp(spec, p)), tuple(n / np.linalg.norm(n)), r.label))
    return out


@dataclass
class SynthCase:
    mask: VoxelGrid
    gt_mesh: TriMesh
    warp: WarpSpec
    rules: list


def gen_case(reference_mesh, spec, rules=(), min_det=0.2):
    """Warp the reference surface and rasterise the result.

    Rejects warps whose Jacobian determinant drops below ``min_det`` on the
    reference bounding box.
    """
    lo = reference_mesh.vertices.min(axis=0)
    hi = reference_mesh.vertices.max(axis=0)
    det = check_warp(spec, lo, hi)
    if det <= min_det:
        raise MeshRegError(f"warp folds or nearly folds: min Jacobian determinant {det:.3f}")
    gt = reference_mesh.with_vertices(eval_warp(spec, reference_mesh.vertices))
    grid = _grid_around(gt.vertices.min(axis=0), gt.vertices.max(axis=0))
    mask = voxelize(gt, grid)
    return SynthCase(mask, gt, spec, warp_rules(rules, spec))


def gen_valid_case(reference_mesh, seed, rules=(), **warp_kw):
    """Draw warps from ``seed`` until one passes the folding check."""
    for attempt in range(100):
        spec = random_warp(seed * 1000 + attempt if attempt else seed, **warp_kw)
        spec.seed = int(seed)
        try:
            return gen_case(reference_mesh, spec, rules)
        except MeshRegError:
            continue
    raise MeshRegError(f"no non-folding warp found for seed {seed}")


def gen_toy_cases(n_cases=5, seed=0, radius=10.0, subdivisions=3, spacing=1.0):
    """Small warped-sphere cases ``(features, reference, gt)`` for training the toy deformer.

    Warps are milder than the vertebra defaults: translation up to 3 mm,
    sinusoid amplitude up to 1.5 mm, wavelength at least 30 mm.
    """
    from .primitives import icosphere
    from .volume import build_feature_volume

    ref = icosphere(subdivisions, radius)
    cases = []
    for k in range(n_cases):
        spec = random_warp(seed + k, max_translation=3.0, max_amplitude=1.5, min_wavelength=30.0)
        gt = ref.with_vertices(eval_warp(spec, ref.vertices))
        grid = _grid_around(gt.vertices.min(axis=0), gt.vertices.max(axis=0), spacing, margin=6.0)
        cases.append((build_feature_volume(voxelize(gt, grid)), ref, gt))
    return cases


# -- dataset layout ----------------------------------------------------------------

def write_dataset(out_dir, n_cases=12, first_seed=0):
    """``ref/`` + ``case_<k>/`` folders and a ``manifest.json``."""
    from . import io as mio

    out = Path(out_dir)
    ref_mask, ref_mesh, rules = gen_reference()
    mio.write_reference(out / "ref", ref_mask, ref_mesh, rules)
    cases = []
    for k in range(n_cases):
        seed = first_seed + k
        case = gen_valid_case(ref_mesh, seed, rules)
        name = f"case_{k}"
        mio.write_case(out / name, case, ref_mesh, rules)
        cases.append({"name": name, "seed": seed})
    manifest = {"reference": "ref", "cases": cases, "spacing_mm": SPACING}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
