"""Toy graph-convolution deformer with hand-derived backpropagation.

Each layer aggregates a vertex with its one-ring neighbours,

    g_i = ReLU( (W0 f_i + b0 + sum_j (W1 f_j + b1)) / (1 + |N(i)|) ),

where the layer input ``f_i`` concatenates the sampled volume features of
vertex ``i`` with the previous layer's output. A linear head maps the last
layer's output to a displacement. Features are sampled once, at the
undeformed reference positions, so no gradient flows through sampling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .deform import DisplacementField
from .exceptions import ConfigError, DivergenceError, MeshError
from .losses import LossWeights, Target, chamfer_curvature, total_loss

log = logging.getLogger(__name__)

DEFAULT_ALPHA = (-2.0, -1.0, 0.0, 1.0, 2.0)


@dataclass
class GnnParams:
    """Per-layer ``(W0, b0, W1, b1)`` plus the displacement head ``(Wh, bh)``."""

    layers: list
    head_w: np.ndarray
    head_b: np.ndarray
    alpha: tuple = DEFAULT_ALPHA
    n_channels: int = 1

    def __post_init__(self):
        if len(self.alpha) == 0:
            raise ConfigError("alpha must list at least one offset")
        self.alpha = tuple(float(a) for a in self.alpha)
        d_cnn = self.cnn_width
        d_prev = 0
        for k, (w0, b0, w1, b1) in enumerate(self.layers):
            d_in = d_cnn + d_prev
            h = w0.shape[0]
            if w0.shape != (h, d_in) or w1.shape != (h, d_in) or b0.shape != (h,) or b1.shape != (h,):
                raise ConfigError(
                    f"layer {k}: expected W0/W1 of shape ({h}, {d_in}) and biases of length {h}, "
                    f"got {w0.shape}, {w1.shape}, {b0.shape}, {b1.shape}"
                )
            d_prev = h
        last = d_prev if self.layers else d_cnn
        if self.head_w.shape != (3, last) or self.head_b.shape != (3,):
            raise ConfigError(f"head: expected (3, {last}) and (3,), got {self.head_w.shape}, {self.head_b.shape}")

    @property
    def cnn_width(self):
        return len(self.alpha) * self.n_channels

    @property
    def n_layers(self):
        return len(self.layers)

    def arrays(self):
        out = [a for layer in self.layers for a in layer]
        return out + [self.head_w, self.head_b]

    def copy(self):
        return GnnParams(
            [tuple(a.copy() for a in layer) for layer in self.layers],
            self.head_w.copy(), self.head_b.copy(), self.alpha, self.n_channels,
        )

    def to_vector(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec):
        """New parameters with the same shapes, filled from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = [], 0
        for a in self.arrays():
            out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != len(vec):
            raise ConfigError(f"parameter vector has {len(vec)} entries, expected {pos}")
        layers = [tuple(out[4 * k:4 * k + 4]) for k in range(self.n_layers)]
        return GnnParams(layers, out[-2], out[-1], self.alpha, self.n_channels)


def init_params(n_channels, alpha=DEFAULT_ALPHA, n_layers=3, width=32, head_scale=1e-2, seed=0):
    """He-initialised layers, zero biases, small random head."""
    if len(alpha) == 0:
        raise ConfigError("alpha must list at least one offset")
    rng = np.random.default_rng(seed)
    d_cnn = len(alpha) * n_channels
    layers, d_prev = [], 0
    for _ in range(n_layers):
        d_in = d_cnn + d_prev
        std = np.sqrt(2.0 / d_in)
        layers.append((
            rng.normal(0, std, (width, d_in)), np.zeros(width),
            rng.normal(0, std, (width, d_in)), np.zeros(width),
        ))
        d_prev = width
    last = d_prev if n_layers else d_cnn
    head = rng.normal(0, head_scale, (3, last))
    return GnnParams(layers, head, np.zeros(3), tuple(alpha), n_channels)


def sample_vertex_features(volume, mesh, alpha):
    """All channels sampled at ``v_i + a n_i`` for every offset ``a``, concatenated."""
    alpha = tuple(alpha)
    if len(alpha) == 0:
        raise ConfigError("alpha must list at least one offset")
    v = mesh.vertices
    n = mesh.vertex_normals() if any(a != 0 for a in alpha) else np.zeros_like(v)
    return np.concatenate([volume.sample(v + a * n) for a in alpha], axis=1)


def _graph(mesh):
    """Symmetric 0/1 adjacency and ``1 / (1 + degree)``."""
    a = mesh._neighbor_csr
    deg = np.diff(a.indptr).astype(np.float64)
    return a, 1.0 / (1.0 + deg), deg


class _Tape:
    """Intermediate values kept for the backward pass."""

    def __init__(self):
        self.inputs = []
        self.agg = []
        self.active = []
        self.last = None


def _forward(features, adjacency, inv_deg, deg, params, tape=None):
    f_cnn = features
    prev = None
    for w0, b0, w1, b1 in params.layers:
        f = f_cnn if prev is None else np.concatenate([f_cnn, prev], axis=1)
        af = adjacency @ f
        pre = (f @ w0.T + b0 + af @ w1.T + deg[:, None] * b1) * inv_deg[:, None]
        out = np.maximum(pre, 0.0)
        if tape is not None:
            tape.inputs.append(f)
            tape.agg.append(af)
            tape.active.append(pre > 0)
        prev = out
    last = f_cnn if prev is None else prev
    if tape is not None:
        tape.last = last
    return last @ params.head_w.T + params.head_b


def _backward(g_disp, adjacency, inv_deg, deg, params, tape):
    """Parameter gradients (same layout as ``params.arrays()``) given dL/d(displacement)."""
    g_head_w = g_disp.T @ tape.last
    g_head_b = g_disp.sum(axis=0)
    g_out = g_disp @ params.head_w
    d_cnn = params.cnn_width
    grads = []
    for k in range(params.n_layers - 1, -1, -1):
        w0, _, w1, _ = params.layers[k]
        g_s = g_out * tape.active[k] * inv_deg[:, None]
        f, af = tape.inputs[k], tape.agg[k]
        grads.append((g_s.T @ f, g_s.sum(axis=0), g_s.T @ af, deg @ g_s))
        # adjacency is symmetric, so its transpose is itself
        g_f = g_s @ w0 + adjacency @ (g_s @ w1)
        g_out = g_f[:, d_cnn:]
    grads.reverse()
    return [g for layer in grads for g in layer] + [g_head_w, g_head_b]


def gnn_forward(mesh, volume, params, features=None):
    """Displacement field predicted for ``mesh`` from features of ``volume``.

    ``features`` may be passed to skip sampling (e.g. when they are cached).
    """
    if features is None:
        if volume.n_channels != params.n_channels:
            raise ConfigError(f"volume has {volume.n_channels} channels, parameters expect {params.n_channels}")
        features = sample_vertex_features(volume, mesh, params.alpha)
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (mesh.n_vertices, params.cnn_width):
        raise ConfigError(f"features of shape {features.shape}, expected ({mesh.n_vertices}, {params.cnn_width})")
    adjacency, inv_deg, deg = _graph(mesh)
    return DisplacementField(_forward(features, adjacency, inv_deg, deg, params))


def loss_and_grad(params, reference, features, target, weights):
    """Mesh loss of one case, its gradient for every parameter array, and the deformed mesh."""
    adjacency, inv_deg, deg = _graph(reference)
    tape = _Tape()
    disp = _forward(features, adjacency, inv_deg, deg, params, tape)
    pred = reference.with_vertices(reference.vertices + disp)
    breakdown, g_disp = total_loss(pred, target, disp, weights, use_schedules=False)
    return breakdown, _backward(g_disp, adjacency, inv_deg, deg, params, tape), pred


@dataclass
class GnnTrainConfig:
    steps: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class GnnHistory:
    loss: list = field(default_factory=list)
    chamfer: list = field(default_factory=list)


def gnn_train(cases, params, config=None):
    """Adam on the mean mesh loss over ``cases`` of ``(volume, reference, gt)``.

    All cases must share the reference connectivity. Returns the trained
    parameters and the per-step mean loss and classical Chamfer history;
    the last history entry is evaluated after the final update.
    """
    config = config or GnnTrainConfig()
    if not cases:
        raise MeshError("gnn_train needs at least one case")
    n_vertices = cases[0][1].n_vertices
    prepared = []
    for volume, reference, gt in cases:
        if reference.n_vertices != n_vertices or not np.array_equal(reference.faces, cases[0][1].faces):
            raise MeshError("all training cases must share the reference connectivity")
        prepared.append((reference, sample_vertex_features(volume, reference, params.alpha), Target(gt)))

    params = params.copy()
    arrays = params.arrays()
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    history = GnnHistory()
    for step in range(config.steps + 1):
        total, chamfer = 0.0, 0.0
        grads = [np.zeros_like(a) for a in arrays]
        for reference, feats, target in prepared:
            breakdown, g, pred = loss_and_grad(params, reference, feats, target, config.weights)
            total += breakdown.total / len(prepared)
            for acc, gk in zip(grads, g):
                acc += gk / len(prepared)
            chamfer += chamfer_curvature(pred, target, mode="classical")[0] / len(prepared)
        if not np.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads):
            raise DivergenceError(step, total)
        history.loss.append(float(total))
        history.chamfer.append(float(chamfer))
        if step == config.steps:
            break
        t = step + 1
        for a, g, mk, vk in zip(arrays, grads, m, v):
            mk *= config.beta1
            mk += (1 - config.beta1) * g
            vk *= config.beta2
            vk += (1 - config.beta2) * g * g
            m_hat = mk / (1 - config.beta1 ** t)
            v_hat = vk / (1 - config.beta2 ** t)
            a -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        if step % 50 == 0:
            log.debug("step %d loss %.6g chamfer %.6g", step, total, chamfer)
    return params, history

