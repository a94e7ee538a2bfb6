"""Dataset-level experiments: reference-to-target, pairwise, and ablation variants."""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .deform import fit_direct
from .estimators import GnnDeformer
from .io import open_dataset
from .metrics import LABELS, aggregate, evaluate_case, label_by_planes, region_centroids
from .register import compose_pair, map_points, ref_to_target
from .validation import target_surface
from .volume import build_feature_volume, voxelize

log = logging.getLogger(__name__)

ABLATIONS = ("variable_ref", "alpha0", "const_seg", "classical_chamfer", "laplacian", "no_disp", "const_edge")


@dataclass
class Reference:
    mask: object
    mesh: object
    rules: list
    labeling: np.ndarray
    centroids: dict


@dataclass
class Case:
    name: str
    seed: int
    mask: object
    gt_mesh: object
    gt_centroids: dict


@dataclass
class CaseResult:
    name: str
    field: object
    deformed: object
    report: object = None


def make_reference(mask, mesh, rules):
    labeling = label_by_planes(mesh, rules)
    return Reference(mask, mesh, list(rules), labeling, region_centroids(mesh, labeling))


def load_dataset(root):
    ds = open_dataset(root)
    ref = make_reference(*ds.load_reference())
    cases = [Case(c.name, c.seed, c.mask(), c.gt_mesh(), c.centroids()) for c in ds.cases]
    return ref, cases


def _points(centroids, labels=LABELS):
    return np.array([centroids[lab] for lab in labels])


# -- fitting ------------------------------------------------------------------

def _fit_one(args):
    ref_mesh, case, config = args
    target = target_surface(case.mask, config.extract.smooth_iters, config.extract.smooth_factor)
    field_, deformed, report = fit_direct(ref_mesh, target, config.fit_config())
    log.info("%s: %d iterations, loss %.4g -> %.4g", case.name, report.n_iters,
             report.initial_total, report.final_total)
    return CaseResult(case.name, field_, deformed, report)


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def fit_cases(ref, cases, config, jobs=1):
    """Deform the reference onto every case; output order follows ``cases``."""
    if config.deformer == "gnn":
        return _fit_gnn(ref, cases, config)
    return _map(_fit_one, [(ref.mesh, c, config) for c in cases], jobs)


def _fit_gnn(ref, cases, config):
    # trained on the extracted target surfaces of the same cases it predicts
    g = config.gnn
    data = []
    for c in cases:
        surf = target_surface(c.mask, config.extract.smooth_iters, config.extract.smooth_factor)
        data.append((build_feature_volume(c.mask), ref.mesh, surf))
    model = GnnDeformer(alpha=tuple(g.alpha), n_layers=g.n_layers, width=g.width, steps=g.steps,
                        learning_rate=g.learning_rate, weights=config.weights, seed=config.seed)
    model.fit(data)
    fields = model.predict([d[0] for d in data])
    return [CaseResult(c.name, f, f.apply(ref.mesh)) for c, f in zip(cases, fields)]


# -- evaluation ---------------------------------------------------------------

def _interp_kw(config):
    return {"cutoff": config.interp.cutoff, "k": config.interp.k, "power": config.interp.power}


def eval_ref2tgt(ref, case, result, config):
    corr = ref_to_target(ref.mesh, result.field)
    mapped = map_points(corr, _points(ref.centroids), **_interp_kw(config))
    mapped = dict(zip(LABELS, mapped))
    pred_mask = voxelize(result.deformed, case.mask)
    return evaluate_case(case.name, ref.labeling, mapped, case.gt_centroids, result.deformed,
                         case.gt_mesh, pred_mask, case.mask)


def _eval_mapping(name, corr, ref, case_i, case_j, config):
    """Map image i's true centroids and surface into image j and score against j's truth."""
    kw = _interp_kw(config)
    mapped = dict(zip(LABELS, map_points(corr, _points(case_i.gt_centroids), **kw)))
    moved = case_i.gt_mesh.with_vertices(map_points(corr, case_i.gt_mesh.vertices, **kw))
    pred_mask = voxelize(moved, case_j.mask)
    return evaluate_case(name, ref.labeling, mapped, case_j.gt_centroids, moved, case_j.gt_mesh,
                         pred_mask, case_j.mask)


def choose_pairs(n_cases, n_pairs, seed=0):
    """Distinct ordered pairs ``(i, j)``, ``i != j``, drawn without replacement."""
    all_pairs = [(i, j) for i in range(n_cases) for j in range(n_cases) if i != j]
    if not all_pairs:
        return []
    rng = np.random.default_rng(seed)
    take = rng.choice(len(all_pairs), size=min(n_pairs, len(all_pairs)), replace=False)
    return [all_pairs[k] for k in take]


def eval_pair(ref, cases, results, i, j, config):
    corr = compose_pair(results[i].field, results[j].field, ref.mesh)
    return _eval_mapping(f"{cases[i].name}->{cases[j].name}", corr, ref, cases[i], cases[j], config)


def eval_pair_variable_ref(ref, cases, results, i, j, config):
    """Use image i's deformed mesh as the template and deform it onto image j directly."""
    target = target_surface(cases[j].mask, config.extract.smooth_iters, config.extract.smooth_factor)
    field_, _, _ = fit_direct(results[i].deformed, target, config.fit_config())
    corr = ref_to_target(results[i].deformed, field_)
    corr.provenance = "pairwise"
    return _eval_mapping(f"{cases[i].name}->{cases[j].name}", corr, ref, cases[i], cases[j], config)


def run_eval(ref, cases, config, jobs=1, results=None):
    """Reference-to-target reports for every case and pairwise reports for random pairs."""
    if results is None:
        results = fit_cases(ref, cases, config, jobs)
    ref_reports = [eval_ref2tgt(ref, c, r, config) for c, r in zip(cases, results)]
    pairs = choose_pairs(len(cases), config.eval.n_pairs, config.seed)
    pair_reports = [eval_pair(ref, cases, results, i, j, config) for i, j in pairs]
    return results, ref_reports, pair_reports


# -- ablations ----------------------------------------------------------------

def ablation_configs(which, config):
    """(baseline, variant) configurations for one ablation."""
    if which not in ABLATIONS:
        raise ValueError(f"unknown ablation {which!r}; choose from {', '.join(ABLATIONS)}")
    base = copy.deepcopy(config)
    var = copy.deepcopy(config)
    if which == "alpha0":
        base.deformer = var.deformer = "gnn"
        var.gnn = replace(var.gnn, alpha=[0.0])
    elif which in ("const_seg", "const_edge"):
        # the schedules are what these toggles switch off
        base.fit = dict(base.fit, use_schedules=True)
        var.fit = dict(var.fit, use_schedules=True)
        var.weights = replace(var.weights, **{which: True})
    elif which == "classical_chamfer":
        var.weights = replace(var.weights, chamfer_curvature="classical")
    elif which == "laplacian":
        var.weights = replace(var.weights, disp_weighting="uniform")
    elif which == "no_disp":
        var.weights = replace(var.weights, disp=0.0)
    return base, var


def run_ablation(ref, cases, which, config, jobs=1):
    """Reports for the baseline and the ablated variant: ``{"baseline": [...], which: [...]}``."""
    base, var = ablation_configs(which, config)
    if which == "variable_ref":
        results = fit_cases(ref, cases, base, jobs)
        pairs = choose_pairs(len(cases), config.eval.n_pairs, config.seed)
        return {
            "baseline": [eval_pair(ref, cases, results, i, j, base) for i, j in pairs],
            which: [eval_pair_variable_ref(ref, cases, results, i, j, var) for i, j in pairs],
        }
    out = {}
    for label, cfg in (("baseline", base), (which, var)):
        results = fit_cases(ref, cases, cfg, jobs)
        out[label] = [eval_ref2tgt(ref, c, r, cfg) for c, r in zip(cases, results)]
    return out


ABLATION_COLUMNS = ("variant", "case", "region", "tre_mm", "hd_mm", "assd_mm", "dice")


def ablation_rows(variants):
    rows = []
    for name, reports in variants.items():
        for rep in reports:
            rows.extend(dict(r, variant=name) for r in rep.rows())
        rows.extend(dict(r, variant=name) for r in aggregate(reports))
    return rows


def mean_tre(reports):
    return float(np.mean([r.mean_tre() for r in reports]))


def summary(reports):
    return {
        "mean_tre": mean_tre(reports),
        "assd": float(np.mean([r.assd["ALL"] for r in reports])),
        "hd": float(np.mean([r.hd["ALL"] for r in reports])),
        "dice": float(np.mean([r.dice for r in reports])),
    }
