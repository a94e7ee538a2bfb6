import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bumpy_sphere, random_rotation, single_triangle
from meshreg.exceptions import DegenerateFaceError, MeshError, NonManifoldError
from meshreg.mesh import (
    TriMesh, build_adjacency, curvature_weight, face_normal, laplacian_smooth, mean_curvature,
    read_obj, read_vertex_scalars, scatter_rows, vertex_normal, write_obj, write_vertex_scalars,
)
from meshreg.primitives import box, cylinder, grid, icosahedron, icosphere, square_pyramid, tetrahedron


def brute_edges(faces):
    out = set()
    for f in faces:
        for a, b in itertools.combinations(f, 2):
            out.add((min(a, b), max(a, b)))
    return out


class TestConstruction:
    def test_rejects_out_of_range_index(self):
        with pytest.raises(MeshError, match="out of range"):
            TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])

    def test_rejects_repeated_index(self):
        with pytest.raises(MeshError, match="repeated"):
            TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])

    def test_rejects_nonfinite(self):
        with pytest.raises(MeshError):
            TriMesh([[0, 0, np.nan], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])

    def test_arrays_are_read_only(self):
        m = single_triangle()
        with pytest.raises(ValueError):
            m.vertices[0, 0] = 5.0

    def test_with_vertices_keeps_connectivity(self):
        m = icosphere(1)
        _ = m.adjacency
        m2 = m.with_vertices(m.vertices * 2)
        assert np.array_equal(m2.faces, m.faces)
        assert np.array_equal(m2.edges, m.edges)

    def test_with_vertices_rejects_count_change(self):
        with pytest.raises(MeshError):
            icosphere(1).with_vertices(np.zeros((3, 3)))


class TestAdjacency:
    def test_tetrahedron_has_three_neighbours_each(self):
        adj = build_adjacency(tetrahedron())
        assert [len(a) for a in adj] == [3, 3, 3, 3]

    def test_single_triangle_has_two_neighbours_each(self):
        assert [len(a) for a in build_adjacency(single_triangle())] == [2, 2, 2]

    def test_degree_sum_matches_brute_force_edges(self, rng):
        m = bumpy_sphere(rng, subdivisions=2)
        m = m.submesh(np.arange(m.n_faces) < 100)
        assert m.n_faces == 100
        edges = brute_edges(m.faces.tolist())
        assert sum(len(a) for a in build_adjacency(m)) == 2 * len(edges)
        assert set(map(tuple, m.edges.tolist())) == edges

    def test_adjacency_symmetric(self):
        adj = build_adjacency(icosphere(2))
        for i, nbrs in enumerate(adj):
            for j in nbrs:
                assert i in adj[j]

    def test_watertight_and_boundary(self):
        assert icosphere(1).is_watertight()
        g = grid(4, 4)
        assert not g.is_watertight()
        # 3x3 squares: 12 boundary edges
        assert len(g.boundary_edges()) == 12

    def test_euler_characteristic(self):
        assert icosphere(2).euler_characteristic() == 2
        assert box().euler_characteristic() == 2

    def test_non_manifold_edge_raises(self):
        v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
        f = [[0, 1, 2], [1, 0, 3], [0, 1, 4]]
        with pytest.raises(NonManifoldError):
            TriMesh(v, f).interior_edge_faces()


class TestNormals:
    def test_ccw_triangle_in_z_plane(self):
        assert np.allclose(face_normal(single_triangle(), 0), [0, 0, 1])

    def test_reversed_winding(self):
        m = TriMesh(single_triangle().vertices, [[0, 2, 1]])
        assert np.allclose(face_normal(m, 0), [0, 0, -1])

    def test_hand_cross_product(self):
        m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 0, 1]], [[0, 1, 2]])
        assert np.allclose(face_normal(m, 0), [0, -1, 0])

    def test_degenerate_face_raises(self):
        m = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        with pytest.raises(DegenerateFaceError):
            face_normal(m, 0)

    def test_flat_grid_interior_vertex(self):
        g = grid(5, 5)
        assert np.allclose(vertex_normal(g, 12), [0, 0, 1])

    def test_pyramid_apex(self):
        p = square_pyramid(1.0)
        apex = int(np.argmax(p.vertices[:, 2]))
        assert np.allclose(vertex_normal(p, apex), [0, 0, 1], atol=1e-12)

    def test_icosahedron_radial(self):
        m = icosahedron()
        for i in range(m.n_vertices):
            radial = m.vertices[i] / np.linalg.norm(m.vertices[i])
            assert np.allclose(vertex_normal(m, i), radial, atol=1e-6)

    def test_isolated_vertex_raises(self):
        m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], [[0, 1, 2]])
        with pytest.raises(MeshError):
            vertex_normal(m, 3)

    def test_unit_length(self, rng):
        m = bumpy_sphere(rng, 2)
        assert np.allclose(np.linalg.norm(m.vertex_normals(), axis=1), 1, atol=1e-9)
        assert np.allclose(np.linalg.norm(m.face_normals(), axis=1), 1, atol=1e-9)

    def test_batch_matches_single(self, rng):
        m = bumpy_sphere(rng)
        vn = m.vertex_normals()
        for i in (0, 7, 30):
            assert np.allclose(vn[i], vertex_normal(m, i))


class TestCurvature:
    def test_flat_grid_zero(self):
        k = mean_curvature(grid(6, 6))
        assert np.all(np.abs(k) < 1e-8)

    def test_unit_sphere(self):
        k = mean_curvature(icosphere(3))
        assert np.all(np.abs(k - 1) < 0.1)

    def test_cylinder_radius_two(self):
        m = cylinder(2.0, 8.0, 48, 25)
        k = mean_curvature(m)
        interior = np.ones(m.n_vertices, dtype=bool)
        interior[np.unique(m.boundary_edges())] = False
        assert np.all(np.abs(k[interior] - 0.25) < 0.25 * 0.15)
        assert np.all(k[~interior] == 0)

    def test_rigid_invariance(self, rng):
        m = bumpy_sphere(rng, 2)
        k0 = mean_curvature(m)
        m2 = m.with_vertices(m.vertices @ random_rotation(rng).T + [3.0, -1.0, 2.0])
        assert np.allclose(mean_curvature(m2), k0, rtol=1e-6)

    def test_scaling(self):
        m = icosphere(3)
        k1 = mean_curvature(m)
        k2 = mean_curvature(m.with_vertices(m.vertices * 2))
        assert np.allclose(k2, k1 / 2, rtol=1e-6)

    def test_weight_examples(self):
        assert curvature_weight(0.0) == 1.0
        assert curvature_weight(10.0, 5.0) == 5.0
        assert curvature_weight(1.5, 5.0) == 2.5


class TestSmoothing:
    def test_tetrahedron_full_step(self):
        t = tetrahedron()
        s = laplacian_smooth(t, 1, 1.0)
        for i in range(4):
            others = [j for j in range(4) if j != i]
            assert np.allclose(s.vertices[i], t.vertices[others].mean(axis=0))

    def test_sphere_shrinks(self):
        m = icosphere(2, 5.0)
        prev = np.linalg.norm(m.vertices, axis=1).max()
        for _ in range(3):
            m = laplacian_smooth(m, 1, 0.5)
            r = np.linalg.norm(m.vertices, axis=1).max()
            assert r < prev
            prev = r

    def test_flat_grid_interior_fixed(self):
        # alternating diagonals give every interior vertex a point-symmetric stencil
        g = grid(7, 7)
        s = laplacian_smooth(g, 1, 0.5)
        interior = np.setdiff1d(np.arange(g.n_vertices), np.unique(g.boundary_edges()))
        assert len(interior) == 25
        assert np.allclose(s.vertices[interior], g.vertices[interior], atol=1e-10)

    def test_connectivity_preserved(self):
        m = icosphere(2)
        assert np.array_equal(laplacian_smooth(m, 5, 0.3).faces, m.faces)

    def test_factor_range(self):
        with pytest.raises(ValueError):
            laplacian_smooth(icosphere(1), 1, 0.0)


class TestIO:
    def test_obj_round_trip_exact(self, tmp_path, rng):
        m = bumpy_sphere(rng, 2)
        write_obj(m, tmp_path / "m.obj")
        m2 = read_obj(tmp_path / "m.obj")
        assert np.array_equal(m.vertices, m2.vertices)
        assert np.array_equal(m.faces, m2.faces)

    def test_obj_uses_one_based_indices(self, tmp_path):
        write_obj(single_triangle(), tmp_path / "t.obj")
        assert "f 1 2 3" in (tmp_path / "t.obj").read_text()

    def test_obj_ignores_texture_suffixes(self, tmp_path):
        (tmp_path / "t.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1\n")
        assert read_obj(tmp_path / "t.obj").n_faces == 1

    def test_obj_parse_error_names_line(self, tmp_path):
        (tmp_path / "bad.obj").write_text("v 0 0 0\nv 1 x 0\n")
        with pytest.raises(MeshError, match=r"bad\.obj:2"):
            read_obj(tmp_path / "bad.obj")

    def test_vertex_scalars_round_trip(self, tmp_path):
        vals = np.array([0.5, 1.25, -3.0])
        write_vertex_scalars(vals, tmp_path / "s.csv")
        assert np.array_equal(read_vertex_scalars(tmp_path / "s.csv"), vals)
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "vertex_index,value"


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=50), st.integers(0, 2 ** 31 - 1))
def test_scatter_rows_matches_loop(index, seed):
    idx = np.array(index)
    vals = np.random.default_rng(seed).normal(size=(len(idx), 3))
    expected = np.zeros((10, 3))
    for i, v in zip(idx, vals):
        expected[i] += v
    assert np.allclose(scatter_rows(idx, vals, 10), expected, atol=1e-12)
