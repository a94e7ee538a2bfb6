import json

import numpy as np
import pytest

from conftest import bumpy_sphere, random_test_mesh
from meshreg.deform import DisplacementField
from meshreg.exceptions import MeshError
from meshreg.primitives import grid, icosphere
from meshreg.register import (
    CorrespondenceSet, compose_pair, interpolate_phi, map_points, read_points_csv, ref_to_target,
    write_points_csv,
)


def surface_points(mesh, rng, n=50):
    """Random points on random triangles of ``mesh``."""
    f = mesh.faces[rng.integers(0, mesh.n_faces, n)]
    b = rng.dirichlet([1, 1, 1], n)
    return np.einsum("ij,ijk->ik", b, mesh.vertices[f])


class TestRefToTarget:
    def test_zero_field_identity(self, rng):
        m = bumpy_sphere(rng)
        c = ref_to_target(m, np.zeros((m.n_vertices, 3)))
        assert np.array_equal(c.src, c.dst)

    def test_constant_field(self, rng):
        m = bumpy_sphere(rng)
        c = ref_to_target(m, DisplacementField(np.tile([1.0, -2.0, 0.5], (m.n_vertices, 1))))
        assert np.array_equal(c.dst, m.vertices + [1.0, -2.0, 0.5])

    def test_random_field_elementwise(self, rng):
        m = bumpy_sphere(rng)
        d = rng.normal(size=(m.n_vertices, 3))
        c = ref_to_target(m, d)
        for i in range(m.n_vertices):
            assert np.array_equal(c.src[i], m.vertices[i])
            assert np.array_equal(c.dst[i], m.vertices[i] + d[i])

    def test_length_mismatch(self):
        with pytest.raises(MeshError):
            ref_to_target(icosphere(1), np.zeros((3, 3)))


class TestComposePair:
    def test_equal_fields_identity(self, rng):
        m = bumpy_sphere(rng)
        d = rng.normal(size=(m.n_vertices, 3))
        c = compose_pair(d, d, m)
        assert np.array_equal(c.src, c.dst)
        assert c.provenance == "pairwise"

    def test_zero_first_field_reduces(self, rng):
        m = bumpy_sphere(rng)
        d = rng.normal(size=(m.n_vertices, 3))
        a = compose_pair(np.zeros_like(d), d, m)
        b = ref_to_target(m, d)
        assert np.array_equal(a.src, b.src) and np.array_equal(a.dst, b.dst)

    def test_hand_example(self):
        from meshreg.mesh import TriMesh

        m = TriMesh([[1, 1, 1], [2, 1, 1], [1, 2, 1]], [[0, 1, 2]])
        d1 = np.zeros((3, 3))
        d2 = np.zeros((3, 3))
        d1[0] = [1, 0, 0]
        d2[0] = [0, 2, 0]
        c = compose_pair(d1, d2, m)
        assert np.array_equal(c.src[0], [2, 1, 1]) and np.array_equal(c.dst[0], [1, 3, 1])
        assert np.array_equal(c.dst[0] - c.src[0], [-1, 2, 0])

    def test_mismatched_reference(self):
        with pytest.raises(MeshError):
            compose_pair(np.zeros((12, 3)), np.zeros((13, 3)), icosphere(0))


class TestInterpolate:
    def test_exact_at_source_vertices(self, rng):
        for _ in range(5):
            m = random_test_mesh(rng)
            c = ref_to_target(m, rng.normal(size=(m.n_vertices, 3)))
            assert np.array_equal(map_points(c, m.vertices), c.dst)

    def test_constant_field_both_paths(self, rng):
        m = bumpy_sphere(rng)
        t = np.array([0.3, -1.2, 2.0])
        c = ref_to_target(m, np.tile(t, (m.n_vertices, 1)))
        near = m.vertices * 1.05
        far = m.vertices * 10.0
        assert np.allclose(map_points(c, near), near + t, atol=1e-12)
        assert np.allclose(map_points(c, far), far + t, atol=1e-12)

    def test_affine_on_surface(self, rng):
        g = grid(6, 5, spacing=1.3)
        A = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        c = ref_to_target(g, g.vertices @ A.T + b)
        q = surface_points(g, rng)
        assert np.allclose(map_points(c, q), q + q @ A.T + b, atol=1e-9)

    def test_off_surface_offset_carried(self):
        g = grid(4, 4)
        c = ref_to_target(g, np.tile([0.0, 0.0, 2.0], (g.n_vertices, 1)))
        assert np.allclose(interpolate_phi(c, [1.5, 1.5, 0.5]), [1.5, 1.5, 2.5])

    def test_idw_fallback_exact_vertex_hit(self, rng):
        m = bumpy_sphere(rng)
        d = rng.normal(size=(m.n_vertices, 3))
        c = ref_to_target(m, d)
        # cutoff 0 forces the fallback; a query at a vertex takes its displacement
        assert np.allclose(interpolate_phi(c, m.vertices[:5], cutoff=-1.0), c.dst[:5])

    def test_idw_fallback_weights(self):
        g = grid(2, 2)
        d = np.array([[1.0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]])
        c = ref_to_target(g, d)
        p = np.array([0.0, 0.0, 10.0])
        dist = np.linalg.norm(g.vertices - p, axis=1)
        w = 1 / dist ** 2
        expect = p + (w[:, None] * d).sum(0) / w.sum()
        assert np.allclose(interpolate_phi(c, p, cutoff=1.0, k=4), expect)

    def test_continuity_across_edges(self, rng):
        m = bumpy_sphere(rng, 2)
        c = ref_to_target(m, rng.normal(0, 0.3, (m.n_vertices, 3)))
        a, b = m.edges[7]
        mid = 0.5 * (m.vertices[a] + m.vertices[b])
        n = np.cross(m.vertices[b] - m.vertices[a], mid)
        n /= np.linalg.norm(n)
        left = map_points(c, [mid + 1e-7 * n])[0]
        right = map_points(c, [mid - 1e-7 * n])[0]
        assert np.linalg.norm(left - right) < 1e-5

    def test_empty_inputs(self):
        m = icosphere(1)
        c = ref_to_target(m, np.zeros((m.n_vertices, 3)))
        assert map_points(c, []).shape == (0, 3)
        with pytest.raises(MeshError):
            interpolate_phi(CorrespondenceSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3))), [0, 0, 0])

    def test_order_preserved(self, rng):
        m = bumpy_sphere(rng)
        c = ref_to_target(m, rng.normal(size=(m.n_vertices, 3)))
        q = rng.normal(0, 4, (20, 3))
        perm = rng.permutation(20)
        assert np.array_equal(map_points(c, q)[perm], map_points(c, q[perm]))


class TestPairwise:
    def test_identity_on_vertices_and_surface(self, rng):
        for _ in range(10):
            m = random_test_mesh(rng)
            d = rng.normal(0, 0.5, (m.n_vertices, 3))
            c = compose_pair(d, d, m)
            moved = m.vertices + d
            assert np.array_equal(map_points(c, moved), moved)
            q = surface_points(m.with_vertices(moved), rng, 20)
            assert np.allclose(map_points(c, q), q, atol=1e-9)

    def test_composition_consistency_at_vertices(self, rng):
        m = bumpy_sphere(rng)
        d1 = rng.normal(0, 0.3, (m.n_vertices, 3))
        d2 = rng.normal(0, 0.3, (m.n_vertices, 3))
        via_pair = map_points(compose_pair(d1, d2, m), m.vertices + d1)
        via_ref = map_points(ref_to_target(m, d2), m.vertices)
        assert np.array_equal(via_pair, via_ref)
        assert np.array_equal(via_ref, m.vertices + d2)


class TestFiles:
    def test_points_round_trip(self, tmp_path, rng):
        pts = rng.normal(size=(7, 3))
        write_points_csv(tmp_path / "p.csv", pts, labels=list("abcdefg"))
        assert np.array_equal(read_points_csv(tmp_path / "p.csv"), pts)

    def test_points_bad_row(self, tmp_path):
        (tmp_path / "p.csv").write_text("x,y,z\n1,2,3\n1,,3\n")
        with pytest.raises(ValueError, match=":3"):
            read_points_csv(tmp_path / "p.csv")

    def test_correspondence_csv_and_sidecar(self, tmp_path, rng):
        m = icosphere(1)
        c = ref_to_target(m, rng.normal(size=(m.n_vertices, 3)))
        c.to_csv(tmp_path / "c.csv", reference_path="ref/mesh.obj")
        rows = (tmp_path / "c.csv").read_text().splitlines()
        assert rows[0] == "src_x,src_y,src_z,dst_x,dst_y,dst_z" and len(rows) == m.n_vertices + 1
        side = json.loads((tmp_path / "c.json").read_text())
        assert side["provenance"] == "ref_to_target" and side["reference_mesh"] == "ref/mesh.obj"
