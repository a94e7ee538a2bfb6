"""Estimator wrappers with the familiar ``fit`` / ``transform`` / ``predict`` surface."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .deform import DisplacementField, FitConfig, fit_direct
from .exceptions import MeshError
from .gnn import GnnTrainConfig, gnn_forward, gnn_train, init_params
from .losses import LossWeights
from .register import compose_pair, map_points, ref_to_target
from .validation import check_mesh, check_points, target_surface


class TemplateDeformer(TransformerMixin, BaseEstimator):
    """Deform a reference mesh onto one target, then map points into the target.

    ``fit`` accepts a target mesh or a binary mask (isosurfaced and smoothed
    with ``smooth_iters``). After fitting, ``transform`` maps reference-space
    points into target space through the induced correspondences.

    Attributes set by ``fit``: ``displacement_``, ``deformed_``, ``report_``
    and ``correspondence_``.
    """

    def __init__(self, reference=None, weights=None, max_iters=400, step_size=0.05,
                 momentum=0.9, use_schedules=False, init="centroid", cutoff=None, k=8,
                 smooth_iters=10, seed=0):
        self.reference = reference
        self.weights = weights
        self.max_iters = max_iters
        self.step_size = step_size
        self.momentum = momentum
        self.use_schedules = use_schedules
        self.init = init
        self.cutoff = cutoff
        self.k = k
        self.smooth_iters = smooth_iters
        self.seed = seed

    def _config(self):
        weights = self.weights if self.weights is not None else LossWeights()
        if isinstance(weights, dict):
            weights = LossWeights.from_dict(weights)
        return FitConfig(
            max_iters=self.max_iters, step_size=self.step_size, momentum=self.momentum,
            use_schedules=self.use_schedules, weights=weights, init=self.init, seed=self.seed,
        )

    def fit(self, X, y=None):
        reference = check_mesh(self.reference, "reference")
        target = target_surface(X, self.smooth_iters)
        self.displacement_, self.deformed_, self.report_ = fit_direct(reference, target, self._config())
        self.correspondence_ = ref_to_target(reference, self.displacement_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "correspondence_"):
            raise MeshError("TemplateDeformer is not fitted; call fit first")

    def transform(self, X):
        self._check_fitted()
        return map_points(self.correspondence_, check_points(X), cutoff=self.cutoff, k=self.k)

    def score(self, X, y):
        """Negative mean distance between mapped ``X`` and expected ``y``."""
        mapped = self.transform(X)
        return -float(np.linalg.norm(mapped - check_points(y, "y"), axis=1).mean())

    def pair_with(self, other):
        """Correspondences from this target to another fitted deformer's target."""
        self._check_fitted()
        other._check_fitted()
        return compose_pair(self.displacement_, other.displacement_, self.reference)


class GnnDeformer(BaseEstimator):
    """Toy graph-convolution deformer trained across cases sharing one reference.

    ``fit`` takes a list of ``(feature_volume, reference, gt_mesh)`` triples;
    ``predict`` takes a feature volume (or a list) and returns displacement
    fields over the reference seen during training.
    """

    def __init__(self, alpha=(-2.0, -1.0, 0.0, 1.0, 2.0), n_layers=3, width=32, steps=500,
                 learning_rate=1e-3, weights=None, seed=0):
        self.alpha = alpha
        self.n_layers = n_layers
        self.width = width
        self.steps = steps
        self.learning_rate = learning_rate
        self.weights = weights
        self.seed = seed

    def fit(self, X, y=None):
        cases = list(X)
        if not cases:
            raise MeshError("GnnDeformer.fit needs at least one case")
        n_channels = cases[0][0].n_channels
        params = init_params(n_channels, self.alpha, self.n_layers, self.width, seed=self.seed)
        weights = self.weights if self.weights is not None else LossWeights()
        config = GnnTrainConfig(steps=self.steps, learning_rate=self.learning_rate,
                                weights=weights, seed=self.seed)
        self.params_, self.history_ = gnn_train(cases, params, config)
        self.reference_ = cases[0][1]
        return self

    def predict(self, X):
        if not hasattr(self, "params_"):
            raise MeshError("GnnDeformer is not fitted; call fit first")
        single = not isinstance(X, (list, tuple))
        out = [gnn_forward(self.reference_, vol, self.params_) for vol in ([X] if single else X)]
        return out[0] if single else out

    def predict_meshes(self, X):
        fields = self.predict(X)
        if isinstance(fields, DisplacementField):
            return fields.apply(self.reference_)
        return [f.apply(self.reference_) for f in fields]
