"""Voxel grids: sampling, isosurfacing, distance fields, voxelisation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.measure import marching_cubes as _sk_marching_cubes

from .exceptions import NotWatertightError
from .mesh import TriMesh

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Scalar volume indexed ``data[i, j, k]`` along x, y, z.

    ``origin`` is the world position (mm) of the centre of voxel (0, 0, 0).
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be three positive numbers, got {self.spacing}")
        if len(origin) != 3:
            raise ValueError("origin must have three components")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self):
        return self.data.shape

    def same_geometry(self, other, atol=1e-9):
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=0, atol=atol)
            and np.allclose(self.origin, other.origin, rtol=0, atol=atol)
        )

    def like(self, data):
        return VoxelGrid(data, self.spacing, self.origin)

    def world_to_index(self, points):
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.origin)) / np.asarray(self.spacing)

    def index_to_world(self, idx):
        return np.asarray(idx, dtype=np.float64) * np.asarray(self.spacing) + np.asarray(self.origin)

    def voxel_centers(self):
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in range(3)]
        return axes


def is_binary(grid):
    d = grid.data
    return bool(np.all((d == 0) | (d == 1)))


def as_mask(grid):
    """Validate that ``grid`` holds only 0/1 values and return it as uint8."""
    if not is_binary(grid):
        raise ValueError("mask values must be exactly 0 or 1")
    return grid.like(grid.data.astype(np.uint8))


@dataclass(frozen=True, eq=False)
class FeatureVolume:
    """Multi-channel volume; channels share dims, spacing and origin."""

    channels: list = field(default_factory=list)
    names: tuple = ()

    def __post_init__(self):
        if not self.channels:
            raise ValueError("a feature volume needs at least one channel")
        ref = self.channels[0]
        for ch in self.channels[1:]:
            if not ref.same_geometry(ch):
                raise ValueError("all channels must share dims, spacing and origin")

    @property
    def n_channels(self):
        return len(self.channels)

    @property
    def geometry(self):
        return self.channels[0]

    def sample(self, points):
        """(n_points, n_channels) trilinear samples."""
        stack = np.stack([c.data for c in self.channels], axis=-1).astype(np.float64)
        return _trilinear(stack, self.geometry, points)


def _trilinear(data, grid, points):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    idx = grid.world_to_index(points)
    dims = np.array(grid.dims)
    idx = np.clip(idx, 0, dims - 1)
    i0 = np.floor(idx).astype(np.int64)
    t = idx - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    if data.ndim > 3:
        t = t[:, :, None]

    def at(cx, cy, cz):
        return data[(i1 if cx else i0)[:, 0], (i1 if cy else i0)[:, 1], (i1 if cz else i0)[:, 2]]

    # nested lerps a + t (b - a) reproduce constant fields exactly
    def lerp(a, b, w):
        return a + w * (b - a)

    c00 = lerp(at(0, 0, 0), at(1, 0, 0), t[:, 0])
    c10 = lerp(at(0, 1, 0), at(1, 1, 0), t[:, 0])
    c01 = lerp(at(0, 0, 1), at(1, 0, 1), t[:, 0])
    c11 = lerp(at(0, 1, 1), at(1, 1, 1), t[:, 0])
    return lerp(lerp(c00, c10, t[:, 1]), lerp(c01, c11, t[:, 1]), t[:, 2])


def trilinear_sample(grid, points):
    """Trilinear interpolation at world points; coordinates are clamped to the grid.

    Accepts a single point (returns a float) or an (n, 3) array.
    """
    pts = np.asarray(points, dtype=np.float64)
    vals = _trilinear(grid.data.astype(np.float64), grid, pts)
    return float(vals[0]) if pts.ndim == 1 else vals


def marching_cubes(grid, iso=0.5):
    """Isosurface at ``iso`` as a TriMesh in world mm with outward orientation.

    Foreground is taken as ``data > iso``. An empty isosurface yields an
    empty mesh.
    """
    data = np.asarray(grid.data, dtype=np.float64)
    if min(data.shape) < 2:
        raise ValueError(f"marching cubes needs at least 2 voxels per axis, got {data.shape}")
    if not (data.min() < iso < data.max()):
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    fg = data > iso
    if fg[0].any() or fg[-1].any() or fg[:, 0].any() or fg[:, -1].any() or fg[:, :, 0].any() or fg[:, :, -1].any():
        log.warning("foreground touches the grid boundary; the extracted surface will be open")
    verts, faces, _, _ = _sk_marching_cubes(data, level=iso, spacing=grid.spacing, allow_degenerate=False)
    verts = verts.astype(np.float64) + np.asarray(grid.origin)
    # skimage winds faces inward for "foreground above iso"; flip to outward
    faces = faces[:, ::-1].astype(np.int64)
    return TriMesh(verts, faces)


def signed_distance(mask):
    """Two-sided exact Euclidean distance field in mm (negative inside).

    Distances are measured between voxel centres and shifted by half the
    smallest spacing so the zero level sits between the two boundary layers.
    """
    fg = np.asarray(mask.data) > 0
    half = 0.5 * min(mask.spacing)
    if not fg.any():
        out = ndimage.distance_transform_edt(np.ones_like(fg), sampling=mask.spacing)
        return mask.like(np.full(fg.shape, np.inf) if fg.size else out)
    if fg.all():
        return mask.like(np.full(fg.shape, -np.inf))
    outside = ndimage.distance_transform_edt(~fg, sampling=mask.spacing)
    inside = ndimage.distance_transform_edt(fg, sampling=mask.spacing)
    sdf = np.where(fg, -(inside - half), outside - half)
    return mask.like(sdf)


FEATURE_CHANNELS = ("sdf", "sdf_dx", "sdf_dy", "sdf_dz")


def build_feature_volume(mask, smoothing_scales=(1.0, 2.0)):
    """Analytic stand-in for a CNN embedding.

    Channel order: signed distance, its x/y/z central-difference gradient,
    then Gaussian-smoothed occupancy for each scale (sigma in mm).
    """
    scales = [float(s) for s in smoothing_scales]
    if any(s <= 0 for s in scales):
        raise ValueError("smoothing scales must be positive")
    sdf = signed_distance(mask)
    sd = sdf.data
    finite = np.isfinite(sd)
    if not finite.all():
        sd = np.where(finite, sd, 0.0)
    grads = np.gradient(sd, *mask.spacing) if min(sd.shape) > 1 else [np.zeros_like(sd)] * 3
    occ = (np.asarray(mask.data) > 0).astype(np.float64)
    channels = [sdf.like(sd)] + [mask.like(g) for g in grads]
    names = list(FEATURE_CHANNELS)
    for s in scales:
        sigma = [s / sp for sp in mask.spacing]
        channels.append(mask.like(ndimage.gaussian_filter(occ, sigma, mode="nearest")))
        names.append(f"occupancy_{s:g}mm")
    return FeatureVolume(channels, tuple(names))


def voxelize(mesh, template):
    """Binary mask of voxel centres inside a closed mesh.

    Parity of +z ray crossings per (x, y) column. Column points on a
    shared triangle edge are attributed to exactly one triangle by a
    top-left fill rule, and a crossing exactly at a voxel centre counts as
    lying above it.
    """
    dims = template.dims
    out = np.zeros(dims, dtype=np.uint8)
    if mesh.is_empty():
        return template.like(out)
    if not mesh.is_watertight():
        raise NotWatertightError(
            f"voxelize needs a closed mesh; {len(mesh.boundary_edges())} boundary edge(s) found"
        )
    idx = template.world_to_index(mesh.vertices)
    tri = idx[mesh.faces]  # (F, 3, 3) in index space
    x, y, z = tri[..., 0], tri[..., 1], tri[..., 2]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    keep = area2 != 0
    tri, x, y, z, area2 = tri[keep], x[keep], y[keep], z[keep], area2[keep]
    # orient every projected triangle counter-clockwise
    flip = area2 < 0
    x[flip] = x[flip][:, [0, 2, 1]]
    y[flip] = y[flip][:, [0, 2, 1]]
    z[flip] = z[flip][:, [0, 2, 1]]
    area2 = np.abs(area2)

    i_lo = np.maximum(np.ceil(x.min(axis=1)).astype(np.int64), 0)
    i_hi = np.minimum(np.floor(x.max(axis=1)).astype(np.int64), dims[0] - 1)
    j_lo = np.maximum(np.ceil(y.min(axis=1)).astype(np.int64), 0)
    j_hi = np.minimum(np.floor(y.max(axis=1)).astype(np.int64), dims[1] - 1)
    ni = np.maximum(i_hi - i_lo + 1, 0)
    nj = np.maximum(j_hi - j_lo + 1, 0)
    counts = ni * nj
    if counts.sum() == 0:
        return template.like(out)
    t = np.repeat(np.arange(len(x)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    ci = i_lo[t] + local // nj[t]
    cj = j_lo[t] + local % nj[t]
    px = ci.astype(np.float64)
    py = cj.astype(np.float64)

    inside = np.ones(len(t), dtype=bool)
    bary = []
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        ax, ay, bx, by = x[t, a], y[t, a], x[t, b], y[t, b]
        w = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        dx, dy = bx - ax, by - ay
        # top-left rule for a counter-clockwise triangle
        top_left = (dy < 0) | ((dy == 0) & (dx > 0))
        inside &= (w > 0) | ((w == 0) & top_left)
        bary.append(w)
    t, ci, cj = t[inside], ci[inside], cj[inside]
    w = np.stack([b[inside] for b in bary], axis=1)
    zt = z[t]
    # offsets from the first corner keep planar faces exact
    zc = zt[:, 0] + (w[:, 1] * (zt[:, 1] - zt[:, 0]) + w[:, 2] * (zt[:, 2] - zt[:, 0])) / w.sum(axis=1)
    # first voxel index strictly above the crossing
    k0 = np.clip(np.floor(zc).astype(np.int64) + 1, 0, dims[2])
    diff = np.zeros((dims[0], dims[1], dims[2] + 1), dtype=np.int64)
    np.add.at(diff, (ci, cj, k0), 1)
    parity = np.cumsum(diff, axis=2)[..., : dims[2]] % 2
    return template.like(parity.astype(np.uint8))


def mask_from_function(inside_fn, dims, spacing, origin):
    """Rasterise ``inside_fn(points) -> bool`` at voxel centres."""
    grid = VoxelGrid(np.zeros(dims, dtype=np.uint8), spacing, origin)
    ax = grid.voxel_centers()
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    return grid.like(inside_fn(pts).reshape(dims).astype(np.uint8))
