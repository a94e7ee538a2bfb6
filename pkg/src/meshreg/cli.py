"""``meshreg`` command line: synth, extract, fit, register, eval, ablate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .deform import DisplacementField
from .exceptions import ConfigError, MeshRegError
from .mesh import read_obj, write_obj
from .metrics import write_metrics_csv
from .register import compose_pair, map_points, read_points_csv, ref_to_target, write_points_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("meshreg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="meshreg", description="Template-mesh registration on synthetic vertebra data.")
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--jobs", type=int, default=1, help="parallel cases (results do not depend on it)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-cases", type=int, default=12)

    s = sub.add_parser("extract", help="isosurface and smooth a binary mask")
    s.add_argument("mask")
    s.add_argument("--out", required=True)
    s.add_argument("--smooth-iters", type=int)

    s = sub.add_parser("fit", help="deform a reference mesh onto one target")
    s.add_argument("--reference", required=True, help="reference OBJ")
    s.add_argument("--target", required=True, help="target mask (.rawvol/.nii) or mesh (.obj)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--max-iters", type=int)

    s = sub.add_parser("register", help="map points through fitted displacements")
    s.add_argument("mode", choices=("ref2tgt", "pair"))
    s.add_argument("--reference", required=True)
    s.add_argument("--disp", nargs="+", required=True, help="one CSV for ref2tgt, two for pair")
    s.add_argument("--points", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval", help="reference-to-target and pairwise metrics on a dataset")
    s.add_argument("--dataset")
    s.add_argument("--results")

    s = sub.add_parser("ablate", help="baseline vs one ablated variant")
    s.add_argument("--dataset")
    s.add_argument("--which", required=True, choices=(
        "variable_ref", "alpha0", "const_seg", "classical_chamfer", "laplacian", "no_disp", "const_edge"))
    s.add_argument("--out", required=True)
    return p


def load_config(args):
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.seed = args.seed
    cmd = getattr(args, "command", None)
    if cmd == "extract" and args.smooth_iters is not None:
        config.extract.smooth_iters = args.smooth_iters
    if cmd == "fit" and args.max_iters is not None:
        config.fit = dict(config.fit, max_iters=args.max_iters)
    if cmd in ("eval", "ablate") and args.dataset:
        config.paths.dataset = args.dataset
    if cmd == "eval" and args.results:
        config.paths.results = args.results
    config.fit_config()
    return config


def _require(path, what):
    if path is None:
        raise UsageError(f"{what} is required (flag or config paths section)")
    return Path(path)


def _load_target(path):
    from .validation import target_surface
    from .volio import read_volume

    path = Path(path)
    if path.suffix.lower() == ".obj":
        return target_surface(read_obj(path))
    return read_volume(path)


def cmd_synth(args, config):
    from .synth import write_dataset

    manifest = write_dataset(args.out, args.n_cases, first_seed=config.seed)
    print(f"wrote {len(manifest['cases'])} cases to {args.out}")


def cmd_extract(args, config):
    from .mesh import laplacian_smooth
    from .volio import read_volume
    from .volume import as_mask, marching_cubes

    mask = as_mask(read_volume(args.mask))
    mesh = marching_cubes(mask)
    if mesh.is_empty():
        raise MeshRegError(f"{args.mask}: mask has no foreground surface")
    if config.extract.smooth_iters:
        mesh = laplacian_smooth(mesh, config.extract.smooth_iters, config.extract.smooth_factor)
    write_obj(mesh, args.out)
    print(f"{args.out}: {mesh.n_vertices} vertices, {mesh.n_faces} faces")


def cmd_fit(args, config):
    from .pipeline import Case, _fit_gnn, make_reference
    from .validation import target_surface
    from .volume import VoxelGrid

    reference = read_obj(args.reference)
    target = _load_target(args.target)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if config.deformer == "gnn":
        if not isinstance(target, VoxelGrid):
            raise UsageError("the gnn deformer needs a target mask, not a mesh")
        ref = make_reference(None, reference, [])
        res = _fit_gnn(ref, [Case("target", config.seed, target, None, {})], config)[0]
        field_, deformed, report = res.field, res.deformed, None
    else:
        from .deform import fit_direct

        surface = target_surface(target, config.extract.smooth_iters, config.extract.smooth_factor)
        field_, deformed, report = fit_direct(reference, surface, config.fit_config())
    field_.to_csv(out / "displacement.csv")
    write_obj(deformed, out / "deformed.obj")
    if report is not None:
        report.to_json(out / "report.json")
        print(f"fit: {report.n_iters} iterations, loss {report.initial_total:.6g} -> {report.final_total:.6g}")


def cmd_register(args, config):
    reference = read_obj(args.reference)
    need = 1 if args.mode == "ref2tgt" else 2
    if len(args.disp) != need:
        raise UsageError(f"register {args.mode} takes {need} displacement file(s), got {len(args.disp)}")
    fields = [DisplacementField.from_csv(p) for p in args.disp]
    for p, f in zip(args.disp, fields):
        if len(f) != reference.n_vertices:
            raise MeshRegError(f"{p}: {len(f)} rows but {args.reference} has {reference.n_vertices} vertices")
    if args.mode == "ref2tgt":
        corr = ref_to_target(reference, fields[0])
    else:
        corr = compose_pair(fields[0], fields[1], reference)
    pts = read_points_csv(args.points)
    mapped = map_points(corr, pts, cutoff=config.interp.cutoff, k=config.interp.k, power=config.interp.power)
    write_points_csv(args.out, mapped)


def cmd_eval(args, config):
    from .pipeline import load_dataset, run_eval, summary

    dataset = _require(config.paths.dataset, "--dataset")
    results_dir = _require(config.paths.results, "--results")
    ref, cases = load_dataset(dataset)
    results, ref_reports, pair_reports = run_eval(ref, cases, config, jobs=args.jobs)
    (results_dir / "disp").mkdir(parents=True, exist_ok=True)
    for r in results:
        r.field.to_csv(results_dir / "disp" / f"{r.name}.csv")
        if r.report is not None:
            r.report.to_json(results_dir / "disp" / f"{r.name}_report.json")
    write_metrics_csv(results_dir / "metrics_ref2tgt.csv", ref_reports)
    write_metrics_csv(results_dir / "metrics_pairwise.csv", pair_reports)
    (results_dir / "config.json").write_text(config.to_json())
    for name, reps in (("ref2tgt", ref_reports), ("pairwise", pair_reports)):
        if reps:
            s = summary(reps)
            print(f"{name}: mean TRE {s['mean_tre']:.3f} mm, ASSD {s['assd']:.3f} mm, "
                  f"HD {s['hd']:.3f} mm, Dice {s['dice']:.4f}")


def cmd_ablate(args, config):
    from .pipeline import ABLATION_COLUMNS, ablation_rows, load_dataset, run_ablation, summary

    dataset = _require(config.paths.dataset, "--dataset")
    ref, cases = load_dataset(dataset)
    variants = run_ablation(ref, cases, args.which, config, jobs=args.jobs)
    with Path(args.out).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS)
        w.writeheader()
        for row in ablation_rows(variants):
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    for name, reps in variants.items():
        print(f"{name}: mean TRE {summary(reps)['mean_tre']:.3f} mm")


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "fit": cmd_fit,
    "register": cmd_register,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
        config = load_config(args)
        if args.print_config:
            sys.stdout.write(config.to_json())
            return EXIT_OK
        if args.command is None:
            raise UsageError("a command is required (or --print-config)")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        COMMANDS[args.command](args, config)
    except (UsageError, ConfigError) as exc:
        print(f"meshreg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MeshRegError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"meshreg: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
