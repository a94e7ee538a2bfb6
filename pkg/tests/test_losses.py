import math

import numpy as np
import pytest

from conftest import bumpy_sphere, random_rotation, random_test_mesh
from meshreg.exceptions import ConfigError, MeshError, NonManifoldError
from meshreg.mesh import TriMesh, curvature_weight, mean_curvature
from meshreg.losses import (
    BCE_EPS, LossWeights, bce_segmentation, chamfer_curvature, displacement_reg, edge_length_loss,
    effective_weights, normal_inter, normal_intra, schedule_delay, schedule_seg_edge, total_loss,
)
from meshreg.primitives import grid, icosphere, tetrahedron


def fd_gradient(fn, x, h=1e-4):
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        for k in range(3):
            xp = x.copy()
            xp[i, k] += h
            xm = x.copy()
            xm[i, k] -= h
            g[i, k] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def perturbed(mesh, rng, scale=0.1):
    return mesh.with_vertices(mesh.vertices + rng.normal(0, scale, mesh.vertices.shape))


def brute_chamfer(pred, gt, kappa):
    u, v = gt.vertices, pred.vertices
    d2 = ((u[:, None, :] - v[None, :, :]) ** 2).sum(-1)
    term_gt = np.mean(kappa * d2.min(axis=1))
    nearest_gt = d2.argmin(axis=0)
    term_pred = np.mean(kappa[nearest_gt] * d2.min(axis=0))
    return term_gt + term_pred


class TestChamfer:
    def test_identical_zero(self, rng):
        m = bumpy_sphere(rng)
        val, g = chamfer_curvature(m, m)
        assert val == 0.0 and not g.any()

    def test_offset_grids(self):
        gt = grid(8, 8, spacing=3.0)
        pred = gt.with_vertices(gt.vertices + [1.0, 0, 0])
        val, _ = chamfer_curvature(pred, gt, mode="classical")
        assert val == 2.0
        assert np.isclose(val, brute_chamfer(pred, gt, np.ones(gt.n_vertices)))

    def test_offset_grids_unit_spacing_matches_brute_force(self):
        gt = grid(6, 6)
        pred = gt.with_vertices(gt.vertices + [1.0, 0, 0])
        val, _ = chamfer_curvature(pred, gt, mode="classical")
        assert np.isclose(val, brute_chamfer(pred, gt, np.ones(gt.n_vertices)), rtol=0, atol=1e-12)

    def test_weighted_matches_brute_force(self, rng):
        gt = bumpy_sphere(rng, 2)
        pred = perturbed(bumpy_sphere(rng, 1), rng)
        kappa = curvature_weight(mean_curvature(gt), 5.0)
        val, _ = chamfer_curvature(pred, gt, 5.0)
        assert np.isclose(val, brute_chamfer(pred, gt, kappa), rtol=1e-12)

    def test_classical_le_weighted(self, rng):
        gt = bumpy_sphere(rng)
        pred = perturbed(gt, rng)
        assert chamfer_curvature(pred, gt, mode="classical")[0] <= chamfer_curvature(pred, gt)[0]

    @pytest.mark.parametrize("mode", ["weighted", "classical"])
    def test_finite_difference(self, rng, mode):
        gt = bumpy_sphere(rng)
        pred = perturbed(bumpy_sphere(rng), rng)
        assert 30 <= pred.n_vertices <= 100
        _, g = chamfer_curvature(pred, gt, 5.0, mode)
        fd = fd_gradient(lambda x: chamfer_curvature(pred.with_vertices(x), gt, 5.0, mode)[0], pred.vertices.copy())
        assert rel_err(g, fd) < 1e-4

    def test_empty_raises(self):
        empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
        with pytest.raises(MeshError):
            chamfer_curvature(empty, icosphere(1))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            chamfer_curvature(icosphere(1), icosphere(1), mode="other")


class TestNormalInter:
    def test_identical_zero(self, rng):
        m = bumpy_sphere(rng)
        val, _ = normal_inter(m, m)
        assert abs(val) < 1e-12

    def test_orthogonal_normals(self):
        gt = grid(5, 5)
        rot = np.array([[1.0, 0, 0], [0, 0, -1], [0, 1, 0]])  # 90 degrees about x
        pred = gt.with_vertices(gt.vertices @ rot.T)
        val, _ = normal_inter(pred, gt)
        assert np.isclose(val, 2.0, atol=1e-12)

    def test_finite_difference(self, rng):
        gt = bumpy_sphere(rng)
        for _ in range(3):
            pred = perturbed(random_test_mesh(rng), rng, 0.05)
            _, g = normal_inter(pred, gt)
            fd = fd_gradient(lambda x: normal_inter(pred.with_vertices(x), gt)[0], pred.vertices.copy())
            assert rel_err(g, fd) < 1e-3


class TestNormalIntra:
    def test_flat_grid_zero(self):
        val, g = normal_intra(grid(5, 5))
        assert abs(val) < 1e-15 and np.allclose(g, 0)

    def test_folded_pair(self):
        v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
        # shared edge 0-1; face normals +z and -y, dihedral 90 degrees
        m = TriMesh(v, [[0, 1, 2], [1, 0, 3]])
        assert len(m.edges) == 5
        assert np.isclose(normal_intra(m)[0], 0.2)

    def test_finite_difference(self, rng):
        for _ in range(3):
            pred = perturbed(random_test_mesh(rng), rng, 0.05)
            _, g = normal_intra(pred)
            fd = fd_gradient(lambda x: normal_intra(pred.with_vertices(x))[0], pred.vertices.copy())
            assert rel_err(g, fd) < 1e-3

    def test_non_manifold_raises(self):
        v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
        with pytest.raises(NonManifoldError):
            normal_intra(TriMesh(v, [[0, 1, 2], [1, 0, 3], [0, 1, 4]]))


class TestEdge:
    def test_unit_tetrahedron(self):
        assert np.isclose(edge_length_loss(tetrahedron(1.0))[0], 1.0)

    def test_collapsed(self):
        t = tetrahedron()
        val, g = edge_length_loss(t.with_vertices(np.zeros((4, 3))))
        assert val == 0 and not g.any()

    def test_scaling_by_two(self, rng):
        m = bumpy_sphere(rng)
        assert edge_length_loss(m.with_vertices(2 * m.vertices))[0] == 4 * edge_length_loss(m)[0]

    def test_finite_difference(self, rng):
        m = random_test_mesh(rng)
        _, g = edge_length_loss(m)
        fd = fd_gradient(lambda x: edge_length_loss(m.with_vertices(x))[0], m.vertices.copy())
        assert rel_err(g, fd) < 1e-6


class TestDisplacementReg:
    @pytest.mark.parametrize("weighting", ["inverse_edge", "uniform"])
    def test_constant_and_zero_fields(self, rng, weighting):
        m = bumpy_sphere(rng)
        assert displacement_reg(np.tile(rng.normal(size=3), (m.n_vertices, 1)), m, weighting)[0] < 1e-25
        assert displacement_reg(np.zeros((m.n_vertices, 3)), m, weighting)[0] == 0

    def test_tetrahedron_uniform(self):
        d = np.zeros((4, 3))
        d[0] = [1, 0, 0]
        assert np.isclose(displacement_reg(d, tetrahedron(), "uniform")[0], 1 / 3)

    def test_inverse_edge_on_regular_mesh_equals_uniform(self, rng):
        d = rng.normal(size=(4, 3))
        t = tetrahedron()
        assert np.isclose(displacement_reg(d, t)[0], displacement_reg(d, t, "uniform")[0])

    @pytest.mark.parametrize("weighting", ["inverse_edge", "uniform"])
    def test_finite_difference_in_disp(self, rng, weighting):
        m = random_test_mesh(rng)
        d = rng.normal(size=(m.n_vertices, 3))
        _, g = displacement_reg(d, m, weighting)
        fd = fd_gradient(lambda x: displacement_reg(x, m, weighting)[0], d)
        assert rel_err(g, fd) < 1e-6

    def test_finite_difference_in_mesh(self, rng):
        m = random_test_mesh(rng)
        d = rng.normal(size=(m.n_vertices, 3))
        _, _, gm = displacement_reg(d, m, return_mesh_grad=True)
        fd = fd_gradient(lambda x: displacement_reg(d, m.with_vertices(x))[0], m.vertices.copy())
        assert rel_err(gm, fd) < 1e-4

    def test_zero_length_edge_raises(self):
        t = tetrahedron()
        v = t.vertices.copy()
        v[1] = v[0]
        with pytest.raises(MeshError):
            displacement_reg(np.zeros((4, 3)), t.with_vertices(v))

    def test_shape_mismatch(self):
        with pytest.raises(MeshError):
            displacement_reg(np.zeros((3, 3)), tetrahedron())


class TestBce:
    def test_exact_match(self, rng):
        y = (rng.random((4, 4, 4)) > 0.5).astype(np.uint8)
        assert bce_segmentation(y.astype(float), y) <= 1.2e-7

    def test_half(self):
        assert np.isclose(bce_segmentation(np.full((3, 3, 3), 0.5), np.ones((3, 3, 3))), math.log(2))

    def test_worst_case(self, rng):
        y = (rng.random((4, 4, 4)) > 0.5).astype(np.uint8)
        assert np.isclose(bce_segmentation(1.0 - y, y), -math.log(BCE_EPS), rtol=1e-6)
        assert np.isclose(-math.log(BCE_EPS), 16.118, atol=1e-3)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bce_segmentation(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


class TestSchedules:
    def test_examples(self):
        assert schedule_delay(3000) == 0.5
        assert schedule_seg_edge(10000) == 0.5
        assert np.isclose(schedule_delay(3001), 0.75)

    def test_range_and_monotone(self):
        ts = np.arange(0, 40000, 7)
        d = np.array([schedule_delay(t) for t in ts])
        s = np.array([schedule_seg_edge(t) for t in ts])
        assert np.all((d > 0) & (d < 1)) and np.all((s > 0) & (s < 1))
        assert np.all(np.diff(d) >= 0) and np.all(np.diff(s) <= 0)

    def test_const_flags(self):
        w = LossWeights(const_seg=True, const_edge=True, seg_base=2.0, edge_base=3.0)
        eff = effective_weights(w, 20000)
        assert eff["seg"] == 2.0 and eff["edge"] == 3.0
        eff = effective_weights(LossWeights(), 20000)
        assert eff["seg"] < 0.05

    def test_weights_validation(self):
        with pytest.raises(ConfigError):
            LossWeights(chamfer=-1)
        with pytest.raises(ConfigError):
            LossWeights(kappa_max=0.5)
        with pytest.raises(ConfigError):
            LossWeights.from_dict({"bogus": 1})


class TestTotal:
    def setup_case(self, rng):
        ref = bumpy_sphere(rng)
        gt = bumpy_sphere(rng)
        disp = rng.normal(0, 0.1, ref.vertices.shape)
        return ref, gt, disp

    def test_identity_zero(self):
        m = grid(5, 5)
        w = LossWeights(edge_base=0.0)
        out, g = total_loss(m, m, np.zeros((m.n_vertices, 3)), w, use_schedules=False)
        assert out.total < 1e-12

    def test_all_weights_zero(self, rng):
        ref, gt, disp = self.setup_case(rng)
        w = LossWeights(chamfer=0, norm_inter=0, norm_intra=0, edge_base=0, disp=0, seg_base=0)
        out, g = total_loss(ref.with_vertices(ref.vertices + disp), gt, disp, w)
        assert out.total == 0 and not g.any()

    def test_recomposition(self, rng):
        ref, gt, disp = self.setup_case(rng)
        pred = ref.with_vertices(ref.vertices + disp)
        w = LossWeights(chamfer=1.3, norm_inter=0.2, norm_intra=0.3, edge_base=0.7, disp=0.4)
        mask_p = rng.random((3, 3, 3))
        mask_g = (rng.random((3, 3, 3)) > 0.5).astype(np.uint8)
        t = 5000
        out, _ = total_loss(pred, gt, disp, w, t, mask_p, mask_g)
        delay = schedule_delay(t)
        decay = schedule_seg_edge(t)
        expect = decay * bce_segmentation(mask_p, mask_g) + delay * (
            1.3 * chamfer_curvature(pred, gt)[0]
            + 0.2 * normal_inter(pred, gt)[0]
            + 0.3 * normal_intra(pred)[0]
            + 0.7 * decay * edge_length_loss(pred)[0]
            + 0.4 * displacement_reg(disp, pred)[0]
        )
        assert abs(out.total - expect) <= 1e-12 * expect

    def test_gradient_wrt_displacement(self, rng):
        ref, gt, disp = self.setup_case(rng)
        w = LossWeights()

        def f(d):
            return total_loss(ref.with_vertices(ref.vertices + d), gt, d, w, use_schedules=False)[0].total

        _, g = total_loss(ref.with_vertices(ref.vertices + disp), gt, disp, w, use_schedules=False)
        assert rel_err(g, fd_gradient(f, disp)) < 1e-3

    def test_rigid_invariance_of_geometry_terms(self, rng):
        ref, gt, disp = self.setup_case(rng)
        pred = ref.with_vertices(ref.vertices + disp)
        rot = random_rotation(rng)
        move = lambda m: m.with_vertices(m.vertices @ rot.T + [1.0, 2.0, 3.0])  # noqa: E731
        for fn in (lambda a, b: chamfer_curvature(a, b)[0], lambda a, b: normal_inter(a, b)[0]):
            assert np.isclose(fn(pred, gt), fn(move(pred), move(gt)), rtol=1e-9)
        assert np.isclose(normal_intra(pred)[0], normal_intra(move(pred))[0], rtol=1e-9)
        assert np.isclose(edge_length_loss(pred)[0], edge_length_loss(move(pred))[0], rtol=1e-9)
