"""Displacement fields and per-case optimisation of reference-mesh displacements."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DivergenceError, MeshError
from .losses import LossBreakdown, LossWeights, Target, total_loss

log = logging.getLogger(__name__)


class DisplacementField:
    """Per-vertex displacement vectors (mm) over one reference mesh."""

    def __init__(self, vectors, n_reference=None):
        v = np.array(vectors, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("displacements must be finite")
        if n_reference is not None and len(v) != n_reference:
            raise MeshError(f"{len(v)} displacements for a reference with {n_reference} vertices")
        v.flags.writeable = False
        self.vectors = v

    def __len__(self):
        return len(self.vectors)

    def __repr__(self):
        return f"DisplacementField(n={len(self)}, max_norm={self.max_norm():.4g})"

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 3)))

    def max_norm(self):
        return float(np.linalg.norm(self.vectors, axis=1).max()) if len(self) else 0.0

    def apply(self, reference):
        """Deformed mesh: reference vertices + displacements, same connectivity."""
        if reference.n_vertices != len(self):
            raise MeshError(f"field has {len(self)} vectors, reference has {reference.n_vertices} vertices")
        return reference.with_vertices(reference.vertices + self.vectors)

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex_index", "dx", "dy", "dz"])
            for i, (dx, dy, dz) in enumerate(self.vectors):
                w.writerow([i, repr(float(dx)), repr(float(dy)), repr(float(dz))])

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"vertex_index", "dx", "dy", "dz"} - set(reader.fieldnames or ())
            if missing:
                raise MeshError(f"{path}: missing column(s) {sorted(missing)}")
            rows = list(reader)
        vec = np.zeros((len(rows), 3))
        seen = np.zeros(len(rows), dtype=bool)
        for lineno, row in enumerate(rows, 2):
            try:
                i = int(row["vertex_index"])
                vals = [float(row[k]) for k in ("dx", "dy", "dz")]
            except (TypeError, ValueError):
                raise MeshError(f"{path}:{lineno}: cannot parse row {row}") from None
            if not 0 <= i < len(rows) or seen[i]:
                raise MeshError(f"{path}:{lineno}: field 'vertex_index' = {i} invalid or repeated")
            seen[i] = True
            vec[i] = vals
        return cls(vec)


@dataclass
class FitConfig:
    max_iters: int = 400
    step_size: float = 0.05
    momentum: float = 0.9
    use_schedules: bool = False
    schedule_span: int = 20000
    weights: LossWeights = field(default_factory=LossWeights)
    convergence_tol: float = 1e-6
    patience: int = 20
    init: str = "centroid"
    max_backtracks: int = 8
    blowup_factor: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        if self.max_iters < 1:
            raise ConfigError("fit.max_iters must be >= 1")
        if not self.step_size > 0:
            raise ConfigError("fit.step_size must be > 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("fit.momentum must lie in [0, 1)")
        if self.max_backtracks < 0:
            raise ConfigError("fit.max_backtracks must be >= 0")
        if not self.blowup_factor > 1:
            raise ConfigError("fit.blowup_factor must be > 1")
        if self.init not in ("zero", "centroid"):
            raise ConfigError(f"fit.init must be 'zero' or 'centroid', got {self.init!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown key(s) in fit: {sorted(unknown)}")
        return cls(**d)


@dataclass
class FitReport:
    history: list
    converged: bool
    n_iters: int
    initial_total: float
    final_total: float
    config: dict
    warnings: list = field(default_factory=list)

    def to_json(self, path=None):
        doc = {
            "converged": self.converged,
            "n_iters": self.n_iters,
            "initial_total": self.initial_total,
            "final_total": self.final_total,
            "warnings": self.warnings,
            "config": self.config,
            "history": [dict(zip(LossBreakdown.CSV_HEADER, b.row())) for b in self.history],
        }
        text = json.dumps(doc, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _schedule_step(k, config):
    if not config.use_schedules:
        return k
    # compress the run onto the training-step axis of the schedules
    return int(round(k * config.schedule_span / max(config.max_iters - 1, 1)))


def _evaluate(reference, tgt, disp, t, config):
    """Loss and gradient, or ``None`` when the iterate has degenerated."""
    pred = reference.with_vertices(reference.vertices + disp)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            breakdown, grad = total_loss(pred, tgt, disp, config.weights, t=t, use_schedules=config.use_schedules)
    except MeshError:
        return None
    if not math.isfinite(breakdown.total) or not np.all(np.isfinite(grad)):
        return None
    return breakdown, grad


def fit_direct(reference, target, config=None):
    """Gradient descent with momentum on per-vertex displacements.

    Stands in for a trained network: the loss stack (without the mask
    term) is minimised for one target at a time. The update is
    ``v <- momentum * v - step * n_vertices * grad``, so the step is
    independent of mesh resolution. The step stays constant unless an
    iterate blows up (non-finite or degenerate geometry, a displacement
    longer than ``blowup_factor`` times the scene diagonal, or without
    schedules a loss above ``blowup_factor`` times the initial one); then it is
    halved and the run restarts from the best iterate, at most
    ``max_backtracks`` times.

    Without schedules the lowest-loss iterate is returned, so the final
    loss never exceeds the initial one. With schedules the totals of
    different steps use different weights and are not comparable, so the
    last iterate is returned.
    """
    config = config or FitConfig()
    tgt = target if isinstance(target, Target) else Target(target)
    if reference.is_empty():
        raise MeshError("reference mesh is empty")
    n = reference.n_vertices
    if config.init == "centroid":
        shift = tgt.mesh.vertices.mean(axis=0) - reference.vertices.mean(axis=0)
        disp = np.tile(shift, (n, 1))
    else:
        disp = np.zeros((n, 3))
    both = np.vstack([reference.vertices, tgt.mesh.vertices])
    max_disp = config.blowup_factor * max(float(np.linalg.norm(np.ptp(both, axis=0))), 1e-12)
    velocity = np.zeros_like(disp)
    history = []
    best = (math.inf, disp.copy(), 0)
    converged = False
    streak = 0
    prev = None
    step = config.step_size
    backtracks = 0
    k = 0
    for k in range(config.max_iters):
        t = _schedule_step(k, config)
        if np.abs(disp).max() > max_disp:
            result = None
        else:
            result = _evaluate(reference, tgt, disp, t, config)
        if result is not None and history and not config.use_schedules:
            if result[0].total > config.blowup_factor * history[0].total:
                result = None
        if result is None:
            if not history:
                # re-run unguarded so a bad input surfaces as its own error
                pred = reference.with_vertices(reference.vertices + disp)
                total = total_loss(pred, tgt, disp, config.weights, t=t, use_schedules=config.use_schedules)[0].total
                raise DivergenceError(k, total)
            if backtracks >= config.max_backtracks:
                raise DivergenceError(k, math.nan)
            backtracks += 1
            step *= 0.5
            disp = best[1].copy()
            velocity = np.zeros_like(disp)
            prev = None
            streak = 0
            continue
        breakdown, grad = result
        history.append(breakdown)
        if breakdown.total < best[0] or config.use_schedules:
            best = (breakdown.total, disp.copy(), k)
        if prev is not None and prev > 0:
            rel = (prev - breakdown.total) / prev
            streak = streak + 1 if abs(rel) < config.convergence_tol else 0
            if streak >= config.patience:
                converged = True
                break
        prev = breakdown.total
        velocity = config.momentum * velocity - step * n * grad
        disp = disp + velocity
    warnings = []
    if backtracks:
        warnings.append(f"step halved {backtracks} time(s) after divergence, final step {step:g}")
        log.info("fit_direct: %s", warnings[-1])
    if not converged:
        warnings.append(f"not converged within {config.max_iters} iterations")
        log.info("fit_direct: %s", warnings[-1])
    field_ = DisplacementField(best[1], n)
    report = FitReport(
        history=history,
        converged=converged,
        n_iters=k + 1,
        initial_total=history[0].total,
        final_total=best[0],
        config=config.to_dict(),
        warnings=warnings,
    )
    return field_, field_.apply(reference), report
