"""Triangle meshes: adjacency, normals, discrete mean curvature, smoothing, OBJ I/O."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy import sparse

from .exceptions import DegenerateFaceError, MeshError, NonManifoldError

DEGENERATE_AREA = 1e-12


def topology_cached(fn):
    """Cache a connectivity-only property in a dict shared by all meshes
    made from one another with :meth:`TriMesh.with_vertices`."""
    name = fn.__name__

    def getter(self):
        cache = self._topology
        if name not in cache:
            cache[name] = fn(self)
        return cache[name]

    getter.__doc__ = fn.__doc__
    return property(getter)


class TriMesh:
    """Immutable triangle mesh with vertices in millimetres.

    Derived structures (edges, neighbour lists, edge-to-face incidence)
    are computed lazily and cached; the vertex and face arrays are made
    read-only so the cache can never go stale. Meshes derived with
    :meth:`with_vertices` share the connectivity cache.
    """

    def __init__(self, vertices, faces, validate=True):
        v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if validate:
            if not np.all(np.isfinite(v)):
                raise MeshError("vertex coordinates must be finite")
            if len(f):
                if f.min() < 0 or f.max() >= len(v):
                    raise MeshError(
                        f"face index out of range [0, {len(v)}): "
                        f"min={f.min()}, max={f.max()}"
                    )
                if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                    raise MeshError("face with repeated vertex index")
        v.flags.writeable = False
        f.flags.writeable = False
        self.vertices = v
        self.faces = f
        self._topology = {}

    def __repr__(self):
        return f"TriMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def is_empty(self):
        return self.n_vertices == 0 or self.n_faces == 0

    def with_vertices(self, vertices):
        """Same connectivity, new positions."""
        out = TriMesh(vertices, self.faces, validate=False)
        if out.n_vertices != self.n_vertices:
            raise MeshError("vertex count changed")
        if not np.all(np.isfinite(out.vertices)):
            raise MeshError("vertex coordinates must be finite")
        out._topology = self._topology
        return out

    # -- connectivity -------------------------------------------------

    @topology_cached
    def _half_edges(self):
        f = self.faces
        a = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
        b = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
        face_id = np.tile(np.arange(len(f)), 3)
        return a, b, face_id

    @topology_cached
    def edges(self):
        """Unique undirected edges ``(i, j)`` with ``i < j``, lexicographically sorted."""
        if self.n_faces == 0:
            return np.zeros((0, 2), dtype=np.int64)
        a, b, _ = self._half_edges
        e = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
        return np.unique(e, axis=0)

    @topology_cached
    def _edge_faces(self):
        """(edge index per half-edge, face id per half-edge, faces-per-edge count)."""
        a, b, face_id = self._half_edges
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * self.n_vertices + hi
        ekey = self.edges[:, 0] * self.n_vertices + self.edges[:, 1]
        eidx = np.searchsorted(ekey, key)
        counts = np.bincount(eidx, minlength=len(self.edges))
        return eidx, face_id, counts

    @property
    def edge_face_counts(self):
        return self._edge_faces[2]

    def boundary_edges(self):
        return self.edges[self.edge_face_counts == 1]

    def is_watertight(self):
        return self.n_faces > 0 and bool(np.all(self.edge_face_counts == 2))

    def interior_edge_faces(self):
        """Face pairs ``(f1, f2)`` sharing each two-sided edge.

        Raises NonManifoldError if any edge is shared by more than two faces.
        """
        return self._interior_edge_faces

    @topology_cached
    def _interior_edge_faces(self):
        eidx, face_id, counts = self._edge_faces
        if np.any(counts > 2):
            raise NonManifoldError(f"{int(np.sum(counts > 2))} edge(s) shared by more than two faces")
        order = np.argsort(eidx, kind="stable")
        se, sf = eidx[order], face_id[order]
        first = np.ones(len(se), dtype=bool)
        first[1:] = se[1:] != se[:-1]
        starts = np.flatnonzero(first)
        two = counts[se[starts]] == 2
        starts = starts[two]
        return np.stack([sf[starts], sf[starts + 1]], axis=1)

    @topology_cached
    def _neighbor_csr(self):
        n = self.n_vertices
        e = self.edges
        i = np.concatenate([e[:, 0], e[:, 1]])
        j = np.concatenate([e[:, 1], e[:, 0]])
        m = sparse.csr_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
        m.sort_indices()
        return m

    @topology_cached
    def adjacency(self):
        """Per-vertex sorted neighbour index arrays, N(i)."""
        m = self._neighbor_csr
        return [m.indices[m.indptr[k]:m.indptr[k + 1]].copy() for k in range(self.n_vertices)]

    @topology_cached
    def _directed_edges(self):
        """Both orientations of every edge, grouped by source vertex."""
        m = self._neighbor_csr
        src = np.repeat(np.arange(self.n_vertices), np.diff(m.indptr))
        return src, m.indices.astype(np.int64)

    @property
    def degrees(self):
        return np.diff(self._neighbor_csr.indptr)

    # -- geometry -----------------------------------------------------

    def face_cross(self):
        """Unnormalised face normals ``(b - a) x (c - a)`` (twice the area vector)."""
        v = self.vertices
        f = self.faces
        return np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])

    def face_areas(self):
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def face_normals(self):
        """Unit normals of all faces; raises on zero-area faces."""
        c = self.face_cross()
        norm = np.linalg.norm(c, axis=1)
        bad = np.flatnonzero(0.5 * norm <= DEGENERATE_AREA)
        if len(bad):
            raise DegenerateFaceError(f"zero-area face(s), first index {bad[0]}")
        return c / norm[:, None]

    def face_normal(self, index):
        c = self.face_cross()[index]
        norm = np.linalg.norm(c)
        if 0.5 * norm <= DEGENERATE_AREA:
            raise DegenerateFaceError(f"face {index} has zero area")
        return c / norm

    def vertex_face_incidence(self):
        """Sparse (n_vertices, n_faces) 0/1 incidence matrix."""
        return self._incidence

    @topology_cached
    def _incidence(self):
        f = self.faces
        rows = f.reshape(-1)
        cols = np.repeat(np.arange(len(f)), 3)
        return sparse.csr_matrix(
            (np.ones(len(rows)), (rows, cols)), shape=(self.n_vertices, len(f))
        )

    def vertex_normals(self):
        """Normalised average of the unit normals of incident faces."""
        s = self.vertex_face_incidence() @ self.face_normals()
        norm = np.linalg.norm(s, axis=1)
        if np.any(norm == 0):
            raise MeshError(f"vertex {int(np.argmin(norm))} has no incident face or cancelling normals")
        return s / norm[:, None]

    def vertex_normal(self, index):
        inc = np.flatnonzero(np.any(self.faces == index, axis=1))
        if len(inc) == 0:
            raise MeshError(f"vertex {index} is isolated")
        s = np.array([self.face_normal(k) for k in inc]).sum(axis=0)
        return s / np.linalg.norm(s)

    def mean_edge_length(self):
        e = self.edges
        if len(e) == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def enclosed_volume(self):
        v = self.vertices
        f = self.faces
        return float(np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]])).sum() / 6.0)

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges) + self.n_faces

    def submesh(self, face_mask):
        """Faces selected by ``face_mask`` with unused vertices dropped."""
        faces = self.faces[np.asarray(face_mask, dtype=bool)]
        used = np.unique(faces)
        remap = np.full(self.n_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return TriMesh(self.vertices[used], remap[faces], validate=False)


def scatter_rows(index, values, n):
    """Sum rows of ``values`` into ``n`` bins given by ``index`` (deterministic order)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        return np.bincount(index, weights=values, minlength=n)
    return np.stack([np.bincount(index, weights=values[:, k], minlength=n) for k in range(values.shape[1])], axis=1)


def build_adjacency(mesh):
    return mesh.adjacency


def face_normal(mesh, index):
    return mesh.face_normal(index)


def vertex_normal(mesh, index):
    return mesh.vertex_normal(index)


def _cot_weights(mesh):
    """Per-face cotangents at each corner and the mixed Voronoi areas per vertex."""
    v = mesh.vertices
    f = mesh.faces
    p = [v[f[:, k]] for k in range(3)]
    cots = np.empty((len(f), 3))
    double_area = np.linalg.norm(mesh.face_cross(), axis=1)
    if np.any(double_area * 0.5 <= DEGENERATE_AREA):
        raise DegenerateFaceError("zero-area face in curvature computation")
    obtuse = np.zeros((len(f), 3), dtype=bool)
    for k in range(3):
        a = p[(k + 1) % 3] - p[k]
        b = p[(k + 2) % 3] - p[k]
        dot = np.einsum("ij,ij->i", a, b)
        cots[:, k] = dot / double_area
        obtuse[:, k] = dot < 0
    area = double_area / 2
    mixed = np.zeros((len(f), 3))
    any_obtuse = obtuse.any(axis=1)
    for k in range(3):
        # Voronoi region of corner k: edges k->k+1 and k->k+2 weighted by opposite cotangents
        i1, i2 = (k + 1) % 3, (k + 2) % 3
        l1 = np.sum((p[i1] - p[k]) ** 2, axis=1)
        l2 = np.sum((p[i2] - p[k]) ** 2, axis=1)
        vor = (l1 * cots[:, i2] + l2 * cots[:, i1]) / 8.0
        mixed[:, k] = np.where(
            any_obtuse, np.where(obtuse[:, k], area / 2, area / 4), vor
        )
    return cots, mixed


def mean_curvature(mesh):
    """Per-vertex discrete mean curvature (1/mm), non-negative.

    ``|Delta x| / 2`` with the cotangent Laplace-Beltrami operator
    normalised by the mixed Voronoi area. Boundary vertices get 0.
    """
    n = mesh.n_vertices
    if mesh.n_faces == 0:
        return np.zeros(n)
    v = mesh.vertices
    f = mesh.faces
    cots, mixed = _cot_weights(mesh)
    lap = np.zeros((n, 3))
    for k in range(3):
        i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        w = cots[:, k][:, None]
        d = v[j] - v[i]
        lap += scatter_rows(i, w * d, n) - scatter_rows(j, w * d, n)
    areas = np.zeros(n)
    areas += scatter_rows(f.reshape(-1), mixed.reshape(-1), n)
    boundary = np.zeros(n, dtype=bool)
    boundary[mesh.boundary_edges().reshape(-1)] = True
    used = np.zeros(n, dtype=bool)
    used[f.reshape(-1)] = True
    interior = used & ~boundary
    if np.any(areas[interior] <= 0):
        raise MeshError("vertex with zero mixed area")
    kappa = np.zeros(n)
    kappa[interior] = 0.25 * np.linalg.norm(lap[interior], axis=1) / areas[interior]
    return kappa


def curvature_weight(kappa, kappa_max=5.0):
    """Clamp ``1 + kappa`` to ``kappa_max``. Works on scalars and arrays."""
    return np.minimum(1.0 + np.asarray(kappa, dtype=np.float64), kappa_max)


def laplacian_smooth(mesh, iterations=10, factor=0.5):
    """Uniform umbrella smoothing; connectivity is left untouched."""
    if not 0 < factor <= 1:
        raise ValueError("factor must lie in (0, 1]")
    m = mesh._neighbor_csr
    deg = np.diff(m.indptr).astype(np.float64)
    has_nbr = deg > 0
    v = mesh.vertices.copy()
    for _ in range(iterations):
        centroid = np.where(has_nbr[:, None], (m @ v) / np.maximum(deg, 1)[:, None], v)
        v = v + factor * (centroid - v)
    return mesh.with_vertices(v)


# -- I/O ----------------------------------------------------------------

def write_obj(mesh, path):
    path = Path(path)
    with path.open("w") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x!r} {y!r} {z!r}\n")
        for a, b, c in (mesh.faces + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")


def read_obj(path):
    """Read ``v``/``f`` records; texture/normal suffixes on face indices are ignored."""
    path = Path(path)
    verts, faces = [], []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    if len(idx) != 3:
                        raise MeshError(f"{path}:{lineno}: only triangular faces are supported")
                    faces.append([i - 1 for i in idx])
            except ValueError as exc:
                raise MeshError(f"{path}:{lineno}: cannot parse record: {exc}") from None
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_vertex_scalars(values, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vertex_index", "value"])
        for i, val in enumerate(values):
            w.writerow([i, val])


def read_vertex_scalars(path, dtype=float):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = [None] * len(rows)
    for row in rows:
        i = int(row["vertex_index"])
        if not 0 <= i < len(rows):
            raise MeshError(f"{path}: vertex_index {i} out of range")
        out[i] = dtype(row["value"])
    return out
