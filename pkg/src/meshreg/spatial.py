"""Exact point-to-triangle distances and nearest-surface queries."""

import numpy as np
from scipy.spatial import cKDTree


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles ``(a, b, c)`` to ``p`` (all arrays of shape (n, 3)).

    Region-based method (Voronoi regions of vertices, edges and the face).
    Returns ``(points, barycentric)`` where ``barycentric`` has shape (n, 3).
    """
    p, a, b, c = (np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    n = len(p)
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    bary = np.empty((n, 3))
    done = np.zeros(n, dtype=bool)

    def assign(mask, u, v, w):
        m = mask & ~done
        bary[m, 0] = u[m] if np.ndim(u) else u
        bary[m, 1] = v[m] if np.ndim(v) else v
        bary[m, 2] = w[m] if np.ndim(w) else w
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), 1.0, 0.0, 0.0)
        assign((d3 >= 0) & (d4 <= d3), 0.0, 1.0, 0.0)
        t_ab = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), 1 - t_ab, t_ab, 0.0)
        assign((d6 >= 0) & (d5 <= d6), 0.0, 0.0, 1.0)
        t_ac = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), 1 - t_ac, 0.0, t_ac)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), 0.0, 1 - t_bc, t_bc)
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        assign(np.ones(n, dtype=bool), 1 - v - w, v, w)
    pts = bary[:, :1] * a + bary[:, 1:2] * b + bary[:, 2:] * c
    return pts, bary


def point_triangle_distance(p, a, b, c):
    pts, _ = closest_point_on_triangles(p, a, b, c)
    return np.linalg.norm(np.asarray(p) - pts, axis=-1)


class SurfaceLocator:
    """Nearest-triangle queries on a fixed triangle soup.

    Candidate triangles are gathered from KD-trees over triangle
    centroids: if the nearest vertex lies at distance ``r`` then the
    closest triangle has its centroid within ``r + R`` where ``R`` bounds
    the centroid-to-corner distance. Triangles are grouped by that radius
    (powers of two) so a few stretched triangles do not widen every
    search. Candidates are then resolved by exact point-triangle distance,
    so results are exact. Ties go to the lowest triangle index.
    """

    CHUNK = 4096

    def __init__(self, vertices, faces):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        if len(self.faces) == 0:
            raise ValueError("SurfaceLocator needs at least one triangle")
        used = np.unique(self.faces)
        self._vtree = cKDTree(self.vertices[used])
        tri = self.vertices[self.faces]
        centroids = tri.mean(axis=1)
        radius = np.max(np.linalg.norm(tri - centroids[:, None, :], axis=2), axis=1)
        base = max(float(np.median(radius)), 1e-12)
        level = np.ceil(np.log2(np.maximum(radius / base, 1.0))).astype(np.int64)
        self._groups = []
        for g in np.unique(level):
            ids = np.flatnonzero(level == g)
            self._groups.append((ids, float(radius[ids].max()), cKDTree(centroids[ids])))

    def _candidates(self, points, upper):
        qs, fs = [], []
        for ids, rad, tree in self._groups:
            # relative slack guards the candidate radius against rounding
            radii = (upper + rad) * (1 + 1e-9) + 1e-12
            lists = tree.query_ball_point(points, radii)
            counts = np.fromiter((len(c) for c in lists), dtype=np.int64, count=len(points))
            qs.append(np.repeat(np.arange(len(points)), counts))
            fs.append(ids[np.fromiter((i for c in lists for i in c), dtype=np.int64, count=int(counts.sum()))])
        return np.concatenate(qs), np.concatenate(fs)

    def query(self, points):
        """Return ``(distance, face_index, closest_point, barycentric)`` per query point."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(points)
        dist = np.full(n, np.inf)
        face = np.full(n, -1, dtype=np.int64)
        closest = np.zeros((n, 3))
        bary = np.zeros((n, 3))
        for lo in range(0, n, self.CHUNK):
            sl = slice(lo, min(lo + self.CHUNK, n))
            dist[sl], face[sl], closest[sl], bary[sl] = self._query_chunk(points[sl])
        return dist, face, closest, bary

    def _query_chunk(self, points):
        n = len(points)
        upper, _ = self._vtree.query(points)
        qidx, fidx = self._candidates(points, upper)
        tri = self.faces[fidx]
        v = self.vertices
        pts, bc = closest_point_on_triangles(points[qidx], v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]])
        d = np.linalg.norm(points[qidx] - pts, axis=1)
        # first minimum per query (lowest face index on ties)
        order = np.lexsort((fidx, d, qidx))
        first = np.ones(len(order), dtype=bool)
        first[1:] = qidx[order][1:] != qidx[order][:-1]
        best = order[first]
        q = qidx[best]
        dist = np.full(n, np.inf)
        face = np.full(n, -1, dtype=np.int64)
        closest = np.zeros((n, 3))
        bary = np.zeros((n, 3))
        dist[q] = d[best]
        face[q] = fidx[best]
        closest[q] = pts[best]
        bary[q] = bc[best]
        return dist, face, closest, bary


def brute_force_point_surface(points, vertices, faces):
    """O(P*F) reference implementation; returns min distances."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        pp = np.broadcast_to(p, (len(f), 3))
        out[i] = point_triangle_distance(pp, v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]).min()
    return out
