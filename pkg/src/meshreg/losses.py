"""Mesh and mask losses with analytic vertex gradients, and the step schedules.

All mesh-loss functions return ``(value, grad)`` where ``grad`` is an
``(n_vertices, 3)`` array of d(value)/d(predicted vertex). Nearest-neighbour
assignments are frozen within one evaluation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .exceptions import ConfigError, DegenerateFaceError, MeshError
from .mesh import curvature_weight, mean_curvature, scatter_rows

BCE_EPS = 1e-7
LOSS_TERMS = ("seg", "chamfer", "norm_inter", "norm_intra", "edge", "disp")


@dataclass
class LossWeights:
    chamfer: float = 1.0
    norm_inter: float = 0.1
    norm_intra: float = 0.1
    edge_base: float = 1.0
    disp: float = 0.5
    seg_base: float = 1.0
    kappa_max: float = 5.0
    disp_weighting: str = "inverse_edge"
    chamfer_curvature: str = "weighted"
    delay_scale: float = 1.0
    const_seg: bool = False
    const_edge: bool = False

    def __post_init__(self):
        for name in ("chamfer", "norm_inter", "norm_intra", "edge_base", "disp", "seg_base"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ConfigError(f"weights.{name} must be finite and >= 0, got {val}")
        if not (math.isfinite(self.kappa_max) and self.kappa_max >= 1):
            raise ConfigError(f"weights.kappa_max must be >= 1, got {self.kappa_max}")
        if self.disp_weighting not in ("inverse_edge", "uniform"):
            raise ConfigError(f"weights.disp_weighting must be 'inverse_edge' or 'uniform', got {self.disp_weighting!r}")
        if self.chamfer_curvature not in ("weighted", "classical"):
            raise ConfigError(f"weights.chamfer_curvature must be 'weighted' or 'classical', got {self.chamfer_curvature!r}")
        if not self.delay_scale > 0:
            raise ConfigError("weights.delay_scale must be > 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown key(s) in weights: {sorted(unknown)}")
        return cls(**d)


# -- schedules ------------------------------------------------------------

def schedule_delay(t, scale=1.0):
    """Ramp-in weight for the mesh terms: ``0.5 + arctan((t - 3000) / scale) / pi``."""
    return 0.5 + math.atan((t - 3000) / scale) / math.pi


def schedule_seg_edge(t):
    """Decaying weight shared by the segmentation and edge terms."""
    return 0.5 - math.atan((t - 10000) / 1000) / math.pi


def effective_weights(weights, t, use_schedules=True):
    if use_schedules:
        delay = schedule_delay(t, weights.delay_scale)
        decay = schedule_seg_edge(t)
    else:
        delay = decay = 1.0
    return {
        "delay": delay,
        "seg": weights.seg_base * (1.0 if weights.const_seg else decay),
        "chamfer": weights.chamfer,
        "norm_inter": weights.norm_inter,
        "norm_intra": weights.norm_intra,
        "edge": weights.edge_base * (1.0 if weights.const_edge else decay),
        "disp": weights.disp,
    }


# -- target-side cache ------------------------------------------------------

class Target:
    """Ground-truth mesh with the quantities the losses reuse every step."""

    def __init__(self, mesh):
        if mesh.n_vertices == 0:
            raise MeshError("target mesh is empty")
        self.mesh = mesh

    @cached_property
    def tree(self):
        return cKDTree(self.mesh.vertices)

    @cached_property
    def curvature(self):
        return mean_curvature(self.mesh)

    @cached_property
    def normals(self):
        return self.mesh.vertex_normals()


def as_target(gt):
    return gt if isinstance(gt, Target) else Target(gt)


# -- normal back-propagation -------------------------------------------------

def _face_normals_with_norm(mesh):
    c = mesh.face_cross()
    norm = np.linalg.norm(c, axis=1)
    if np.any(0.5 * norm <= 1e-12):
        raise DegenerateFaceError(f"zero-area face, first index {int(np.argmin(norm))}")
    return c / norm[:, None], norm


def _face_normal_backward(mesh, nf, cnorm, g_nf):
    """Vertex gradient from a gradient on unit face normals."""
    g_c = (g_nf - nf * np.einsum("ij,ij->i", nf, g_nf)[:, None]) / cnorm[:, None]
    v = mesh.vertices
    f = mesh.faces
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    gb = np.cross(e2, g_c)
    gcc = np.cross(g_c, e1)
    grad = np.zeros_like(v)
    grad += scatter_rows(f[:, 1], gb, len(grad))
    grad += scatter_rows(f[:, 2], gcc, len(grad))
    grad += scatter_rows(f[:, 0], -(gb + gcc), len(grad))
    return grad


def _vertex_normals_forward(mesh):
    nf, cnorm = _face_normals_with_norm(mesh)
    inc = mesh.vertex_face_incidence()
    s = inc @ nf
    snorm = np.linalg.norm(s, axis=1)
    if np.any(snorm == 0):
        raise MeshError("vertex normal undefined (isolated vertex or cancelling faces)")
    return s / snorm[:, None], (nf, cnorm, inc, snorm)


def _vertex_normal_backward(mesh, nv, cache, g_nv):
    nf, cnorm, inc, snorm = cache
    g_s = (g_nv - nv * np.einsum("ij,ij->i", nv, g_nv)[:, None]) / snorm[:, None]
    g_nf = inc.T @ g_s
    return _face_normal_backward(mesh, nf, cnorm, g_nf)


# -- individual losses ---------------------------------------------------------

def _check_nonempty(*meshes):
    for m in meshes:
        if m.n_vertices == 0:
            raise MeshError("loss evaluated on an empty mesh")


def nearest_pairs(pred, gt):
    """Nearest pred vertex of every gt vertex and nearest gt vertex of every pred vertex."""
    target = as_target(gt)
    _, nn_p = cKDTree(pred.vertices).query(target.mesh.vertices)
    _, nn_g = target.tree.query(pred.vertices)
    return nn_p, nn_g


def chamfer_curvature(pred, gt, kappa_max=5.0, mode="weighted", nn=None):
    """Curvature-weighted symmetric Chamfer distance (squared distances).

    The gt-to-pred term weights each gt vertex by its own curvature weight;
    the pred-to-gt term weights each pred vertex by the weight of its
    nearest gt vertex. ``mode="classical"`` sets all weights to 1.
    """
    target = as_target(gt)
    _check_nonempty(pred, target.mesh)
    u = target.mesh.vertices
    v = pred.vertices
    if mode == "weighted":
        kappa = curvature_weight(target.curvature, kappa_max)
    elif mode == "classical":
        kappa = np.ones(len(u))
    else:
        raise ValueError(f"unknown chamfer mode {mode!r}")
    nn_p, nn_g = nn if nn is not None else nearest_pairs(pred, target)
    # gt -> pred
    diff_u = u - v[nn_p]
    term_gt = np.sum(kappa * np.einsum("ij,ij->i", diff_u, diff_u)) / len(u)
    # pred -> gt
    diff_v = v - u[nn_g]
    k_v = kappa[nn_g]
    term_pred = np.sum(k_v * np.einsum("ij,ij->i", diff_v, diff_v)) / len(v)

    grad = 2.0 * k_v[:, None] * diff_v / len(v)
    grad += scatter_rows(nn_p, -2.0 * kappa[:, None] * diff_u / len(u), len(grad))
    return float(term_gt + term_pred), grad


def normal_inter(pred, gt, nn=None):
    """Symmetric ``1 - cos`` between vertex normals of nearest-vertex pairs."""
    target = as_target(gt)
    _check_nonempty(pred, target.mesh)
    u = target.mesh.vertices
    v = pred.vertices
    n_gt = target.normals
    n_p, cache = _vertex_normals_forward(pred)
    nn_p, nn_g = nn if nn is not None else nearest_pairs(pred, target)
    cos_gt = np.einsum("ij,ij->i", n_gt, n_p[nn_p])
    cos_p = np.einsum("ij,ij->i", n_p, n_gt[nn_g])
    value = np.sum(1 - cos_gt) / len(u) + np.sum(1 - cos_p) / len(v)
    g_np = -n_gt[nn_g] / len(v)
    g_np += scatter_rows(nn_p, -n_gt / len(u), len(g_np))
    grad = _vertex_normal_backward(pred, n_p, cache, g_np)
    return float(value), grad


def normal_intra(pred):
    """Mean over all edges of ``1 - cos`` between the two adjacent face normals.

    Boundary edges contribute zero but still count in the normalisation.
    """
    n_edges = len(pred.edges)
    if n_edges == 0:
        return 0.0, np.zeros_like(pred.vertices)
    pairs = pred.interior_edge_faces()
    nf, cnorm = _face_normals_with_norm(pred)
    f1, f2 = pairs[:, 0], pairs[:, 1]
    value = np.sum(1 - np.einsum("ij,ij->i", nf[f1], nf[f2])) / n_edges
    g_nf = np.zeros_like(nf)
    g_nf += scatter_rows(f1, -nf[f2] / n_edges, len(g_nf))
    g_nf += scatter_rows(f2, -nf[f1] / n_edges, len(g_nf))
    return float(value), _face_normal_backward(pred, nf, cnorm, g_nf)


def edge_length_loss(pred):
    """Mean squared edge length."""
    e = pred.edges
    if len(e) == 0:
        raise MeshError("edge loss needs at least one edge")
    d = pred.vertices[e[:, 0]] - pred.vertices[e[:, 1]]
    value = np.sum(d * d) / len(e)
    grad = np.zeros_like(pred.vertices)
    grad += scatter_rows(e[:, 0], 2 * d / len(e), len(grad))
    grad += scatter_rows(e[:, 1], -2 * d / len(e), len(grad))
    return float(value), grad


def neighbor_weights(mesh, weighting="inverse_edge"):
    """Row-normalised neighbour weights over directed edges ``(src, dst, w)``."""
    src, dst = mesh._directed_edges
    deg = mesh.degrees
    if np.any(deg == 0):
        raise MeshError(f"vertex {int(np.argmin(deg))} has no neighbours")
    if weighting == "uniform":
        return src, dst, 1.0 / deg[src], None
    if weighting != "inverse_edge":
        raise ValueError(f"unknown weighting {weighting!r}")
    length = np.linalg.norm(mesh.vertices[src] - mesh.vertices[dst], axis=1)
    if np.any(length == 0):
        raise MeshError("zero-length edge: inverse-edge-length weights undefined")
    q = 1.0 / length
    total = np.bincount(src, weights=q, minlength=mesh.n_vertices)
    return src, dst, q / total[src], (length, total)


def displacement_reg(disp, mesh, weighting="inverse_edge", return_mesh_grad=False):
    """Mean squared deviation of each displacement from its neighbours' weighted average.

    Returns ``(value, grad_disp)``, or ``(value, grad_disp, grad_mesh)`` when
    ``return_mesh_grad`` is set; ``grad_mesh`` is the gradient through the
    inverse-edge-length weights with respect to ``mesh`` vertex positions.
    """
    d = np.asarray(disp, dtype=np.float64)
    n = mesh.n_vertices
    if d.shape != (n, 3):
        raise MeshError(f"displacement shape {d.shape} does not match {n} vertices")
    src, dst, w, aux = neighbor_weights(mesh, weighting)
    # directed edges follow the neighbour CSR layout, so W shares its structure
    csr = mesh._neighbor_csr
    W = sparse.csr_matrix((w, csr.indices, csr.indptr), shape=(n, n))
    r = d - W @ d
    value = np.sum(r * r) / n
    g_r = 2 * r / n
    grad = g_r - W.T @ g_r
    if not return_mesh_grad:
        return float(value), grad
    g_mesh = np.zeros_like(d)
    if aux is not None:
        length, total = aux
        g_w = -np.einsum("ij,ij->i", g_r[src], d[dst])
        gw_dot_w = np.bincount(src, weights=g_w * w, minlength=n)
        g_q = (g_w - gw_dot_w[src]) / total[src]
        g_len = -g_q / length**2
        unit = (mesh.vertices[src] - mesh.vertices[dst]) / length[:, None]
        g_mesh += scatter_rows(src, g_len[:, None] * unit, len(g_mesh))
        g_mesh += scatter_rows(dst, -g_len[:, None] * unit, len(g_mesh))
    return float(value), grad, g_mesh


def bce_segmentation(pred, gt, eps=BCE_EPS):
    """Mean binary cross-entropy over voxels; predictions clamped to ``[eps, 1 - eps]``."""
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    y = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs ground truth {y.shape}")
    p = np.clip(p, eps, 1 - eps)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


# -- composition ----------------------------------------------------------------

@dataclass
class LossBreakdown:
    t: int = 0
    seg: float = 0.0
    chamfer: float = 0.0
    norm_inter: float = 0.0
    norm_intra: float = 0.0
    edge: float = 0.0
    disp: float = 0.0
    total: float = 0.0
    weights: dict = field(default_factory=dict)

    CSV_HEADER = ("t", "seg", "chamfer", "norm_inter", "norm_intra", "edge", "disp", "total")

    def row(self):
        return [self.t] + [getattr(self, k) for k in self.CSV_HEADER[1:]]

    def to_dict(self):
        return asdict(self)


def total_loss(pred, gt, disp, weights, t=0, pred_mask=None, gt_mask=None, use_schedules=True):
    """Weighted sum of all terms and its gradient w.r.t. the displacements.

    ``pred`` must equal reference + ``disp``; mesh terms depend on the
    displacements only through ``pred``, while the regulariser also sees
    ``disp`` directly. Terms whose effective weight is zero are skipped.
    """
    eff = effective_weights(weights, t, use_schedules)
    out = LossBreakdown(t=int(t), weights=eff)
    grad = np.zeros_like(pred.vertices)
    delay = eff["delay"]

    if pred_mask is not None and gt_mask is not None:
        out.seg = bce_segmentation(pred_mask, gt_mask)

    nn = None
    if delay * (eff["chamfer"] + eff["norm_inter"]) > 0:
        gt = as_target(gt)
        nn = nearest_pairs(pred, gt)
    if delay * eff["chamfer"] > 0:
        out.chamfer, g = chamfer_curvature(pred, gt, weights.kappa_max, weights.chamfer_curvature, nn)
        grad += delay * eff["chamfer"] * g
    if delay * eff["norm_inter"] > 0:
        out.norm_inter, g = normal_inter(pred, gt, nn)
        grad += delay * eff["norm_inter"] * g
    if delay * eff["norm_intra"] > 0:
        out.norm_intra, g = normal_intra(pred)
        grad += delay * eff["norm_intra"] * g
    if delay * eff["edge"] > 0:
        out.edge, g = edge_length_loss(pred)
        grad += delay * eff["edge"] * g
    if delay * eff["disp"] > 0:
        out.disp, g_d, g_m = displacement_reg(disp, pred, weights.disp_weighting, return_mesh_grad=True)
        grad += delay * eff["disp"] * (g_d + g_m)

    out.total = eff["seg"] * out.seg + delay * (
        eff["chamfer"] * out.chamfer
        + eff["norm_inter"] * out.norm_inter
        + eff["norm_intra"] * out.norm_intra
        + eff["edge"] * out.edge
        + eff["disp"] * out.disp
    )
    return out, grad
