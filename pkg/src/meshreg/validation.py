"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np

from .exceptions import MeshError
from .mesh import TriMesh, laplacian_smooth
from .volume import VoxelGrid, as_mask, is_binary, marching_cubes


def check_points(points, name="points"):
    """Float64 ``(n, 3)`` array of finite coordinates."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim == 1 and p.size == 3:
        p = p[None]
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"{name}: expected shape (n, 3), got {np.shape(points)}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name}: coordinates must be finite")
    return p


def check_mesh(mesh, name="mesh", require_watertight=False):
    if not isinstance(mesh, TriMesh):
        raise TypeError(f"{name}: expected a TriMesh, got {type(mesh).__name__}")
    if mesh.is_empty():
        raise MeshError(f"{name}: mesh is empty")
    if require_watertight and not mesh.is_watertight():
        raise MeshError(f"{name}: mesh is not watertight")
    return mesh


def check_displacements(disp, n_vertices, name="displacements"):
    d = check_points(getattr(disp, "vectors", disp), name)
    if len(d) != n_vertices:
        raise MeshError(f"{name}: {len(d)} vectors for a reference with {n_vertices} vertices")
    return d


def check_mask(grid, name="mask"):
    if not isinstance(grid, VoxelGrid):
        raise TypeError(f"{name}: expected a VoxelGrid, got {type(grid).__name__}")
    if not is_binary(grid):
        raise ValueError(f"{name}: volume is not binary")
    return as_mask(grid)


def target_surface(target, smooth_iters=10, smooth_factor=0.2):
    """A target given as a mesh passes through; a binary mask is isosurfaced and smoothed."""
    if isinstance(target, TriMesh):
        return check_mesh(target, "target")
    mask = check_mask(target, "target")
    mesh = marching_cubes(mask)
    if mesh.is_empty():
        raise MeshError("target: mask has no foreground surface")
    return laplacian_smooth(mesh, smooth_iters, smooth_factor) if smooth_iters else mesh
