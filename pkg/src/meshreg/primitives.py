"""Small analytic meshes used by tests, demos and the synthetic generator."""

import numpy as np

from .mesh import TriMesh


def tetrahedron(edge=1.0):
    """Regular tetrahedron with outward-facing faces."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= edge / (2 * np.sqrt(2))
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(v, f)


def icosahedron(radius=1.0):
    t = (1 + np.sqrt(5)) / 2
    v = np.array(
        [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]],
        dtype=float,
    )
    v *= radius / np.linalg.norm(v[0])
    f = np.array(
        [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    )
    return TriMesh(v, f)


def icosphere(subdivisions=2, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Loop-style midpoint subdivision of an icosahedron, projected to the sphere."""
    mesh = icosahedron()
    v = mesh.vertices.copy()
    f = mesh.faces.copy()
    for _ in range(subdivisions):
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mid = (v[uniq[:, 0]] + v[uniq[:, 1]]) / 2
        base = len(v)
        v = np.vstack([v, mid])
        nf = len(f)
        m01 = base + inv[:nf]
        m12 = base + inv[nf:2 * nf]
        m20 = base + inv[2 * nf:]
        f = np.concatenate([
            np.stack([f[:, 0], m01, m20], axis=1),
            np.stack([f[:, 1], m12, m01], axis=1),
            np.stack([f[:, 2], m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ])
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return TriMesh(v * radius + np.asarray(center, dtype=float), f)


def grid(nx=5, ny=5, spacing=1.0, z=0.0):
    """Flat, counter-clockwise triangulated grid in a z-plane (normals +z).

    Each square is split along alternating diagonals so every interior
    vertex has a symmetric stencil.
    """
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="ij")
    v = np.stack([xs.ravel(), ys.ravel(), np.full(nx * ny, z)], axis=1)
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            c = (i + 1) * ny + j + 1
            d = i * ny + j + 1
            if (i + j) % 2 == 0:
                faces += [[a, b, c], [a, c, d]]
            else:
                faces += [[a, b, d], [b, c, d]]
    return TriMesh(v, np.array(faces))


def cylinder(radius=1.0, height=4.0, n_around=48, n_along=25):
    """Open cylinder along z (no caps), outward normals."""
    theta = np.arange(n_around) * 2 * np.pi / n_around
    zs = np.linspace(-height / 2, height / 2, n_along)
    v = np.array([[radius * np.cos(t), radius * np.sin(t), z] for z in zs for t in theta])
    faces = []
    for k in range(n_along - 1):
        for i in range(n_around):
            a = k * n_around + i
            b = k * n_around + (i + 1) % n_around
            c = (k + 1) * n_around + (i + 1) % n_around
            d = (k + 1) * n_around + i
            faces += [[a, b, c], [a, c, d]]
    return TriMesh(v, np.array(faces))


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
    """Closed axis-aligned box of 12 triangles, outward normals."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    v = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    # vertex index = 4*ix + 2*iy + iz
    f = np.array([
        [0, 1, 3], [0, 3, 2],  # x = lo
        [4, 6, 7], [4, 7, 5],  # x = hi
        [0, 4, 5], [0, 5, 1],  # y = lo
        [2, 3, 7], [2, 7, 6],  # y = hi
        [0, 2, 6], [0, 6, 4],  # z = lo
        [1, 5, 7], [1, 7, 3],  # z = hi
    ])
    return TriMesh(v, f)


def square_pyramid(height=1.0):
    """Open square pyramid (four sides, no base) with apex on +z."""
    v = np.array([[1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0], [0, 0, height]], dtype=float)
    f = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    return TriMesh(v, f)
