"""Command-line entry point: ``pinnagen <verb> [options]``.

Exit codes: 0 success, 2 partial (some subjects or frequencies failed),
1 fatal (bad configuration, unreadable input, archive mismatch).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bem.prtf import export_bem_bundle, simulate_frequency, source_centroid
from .bem.solver import BemError
from .mesh import ClosingError, RemeshError, build_mesh, check_mesh, close_mesh, grade_mesh, read_mesh, write_mesh
from .pipeline import ConfigError, PipelineConfig, PipelineError, resume_pipeline, run_pipeline
from .pipeline.archive import Manifest, read_complex, read_json, write_array, write_complex, write_json
from .post import PrtfSet, diffuse_field_equalize
from .shape_model import cpv_curve, fit_shape_model, load_dataset, load_model, save_dataset, save_model
from .sphgrid import icosphere
from .stats import NormalityReport, royston_test, shapiro_wilk
from .synthesis import draw_pc_weights, gate_report, quality_filter, synthesize_shapes
from .toy import toy_dataset

log = logging.getLogger("pinnagen")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _config(args) -> PipelineConfig:
    return PipelineConfig.load(args.config, seed=args.seed)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_toy(args) -> int:
    ds = toy_dataset(args.n_subjects, args.seed if args.seed is not None else 7, args.n_rings)
    path = save_dataset(ds, args.out)
    print(f"wrote {ds.n_subjects} shapes with {ds.n_vertices} vertices to {path}")
    return EXIT_OK


def cmd_fit(args) -> int:
    ds = load_dataset(args.dataset)
    model = fit_shape_model(ds)
    save_model(model, args.out)
    _print_json({"n_subjects": ds.n_subjects, "n_components": model.n_components, "cpv": [float(c) for c in cpv_curve(model)]})
    return EXIT_OK


def cmd_draw(args) -> int:
    model = load_model(args.model)
    batch = draw_pc_weights(model, args.count, args.seed if args.seed is not None else 0)
    shapes = synthesize_shapes(model, batch)
    if args.dataset:
        quality_filter(shapes, load_dataset(args.dataset).topology, batch)
    out = Path(args.out)
    write_array(out / "weights.f8", batch.weights)
    write_array(out / "shapes.f8", shapes)
    report = gate_report(batch)
    write_json(out / "draws.json", {
        "count": batch.count, "seed": batch.seed, "n_components": model.n_components, "dim": model.dim,
        "kept": [bool(k) for k in batch.kept_mask], "reasons": batch.rejection_reasons,
        "gated": bool(args.dataset), "gate": report.as_dict(),
    })
    print(f"{batch.count} drawn, {report.n_kept} kept ({100 * report.rejection_rate:.1f}% rejected)")
    return EXIT_OK


def _closed_mesh(args, cfg: PipelineConfig):
    ds = load_dataset(args.dataset)
    dim = 3 * ds.n_vertices
    if args.shape:
        flat = np.fromfile(args.shape, dtype="<f8")
        if flat.size % dim:
            raise ValueError(f"{args.shape}: {flat.size} values is not a multiple of {dim}")
        shapes = flat.reshape(-1, dim)
    else:
        shapes = ds.data
    mesh = build_mesh(shapes[args.row], ds.topology)
    if not args.close:
        return mesh
    src = cfg.raw["source"]
    loops = [ds.boundary_loops[src["canal_loop"]], ds.boundary_loops[src["outer_loop"]]]
    return close_mesh(mesh, loops, cfg.base)


def cmd_mesh(args) -> int:
    cfg = _config(args)
    mesh = read_mesh(args.mesh) if args.mesh else _closed_mesh(args, cfg)
    if args.grade is not None:
        band = cfg.bands[args.grade]
        mesh = grade_mesh(mesh, band.grading.with_focus(source_centroid(mesh)))
    if args.out:
        write_mesh(mesh, args.out)
    if args.check:
        report = check_mesh(mesh)
        _print_json(report.as_dict())
        return EXIT_OK if report.simulation_ready else EXIT_PARTIAL
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    meshes = [read_mesh(p) for p in args.mesh]
    g = cfg.raw["grid"]
    grid = icosphere(int(g["subdivision_frequency"]), float(g["radius_m"]))
    center = np.asarray(args.center, dtype=float) if args.center else source_centroid(meshes[0])
    sweep = cfg.sweep
    if args.bundle:
        if len(meshes) != len(sweep.bands):
            raise PipelineError(f"--bundle needs one mesh per band ({len(sweep.bands)})")
        print(export_bem_bundle(args.bundle, meshes, sweep, grid, center, float(cfg.raw["source"]["v_n"]), cfg.medium))
        return EXIT_OK
    freqs = sweep.frequencies
    which = sweep.band_indices() if len(meshes) > 1 else np.zeros(len(freqs), dtype=int)
    bem = cfg.raw["bem"]
    raw = np.full((len(freqs), grid.n_directions), np.nan + 0j)
    errors = []
    for k, f in enumerate(freqs):
        try:
            res = simulate_frequency(meshes[which[k]], f, grid, center, float(cfg.raw["source"]["v_n"]), cfg.medium,
                                     int(bem["n_chief"]), int(bem["chief_seed"]), float(bem["min_elements_per_wavelength"]))
        except BemError as exc:
            errors.append(f"{f:g} Hz: {exc}")
            log.warning("%g Hz failed: %s", f, exc)
            continue
        raw[k] = res.values
        log.info("%g Hz: residual %.2e, condition %.2e", f, res.residual, res.condition)
    out = Path(args.out)
    write_complex(out / "prtf_raw", raw)
    write_json(out / "prtf_raw.json", {"frequencies_hz": [float(f) for f in freqs], "n_directions": grid.n_directions,
                                       "center_mm": [float(x) for x in center], "errors": errors})
    return EXIT_PARTIAL if errors else EXIT_OK


def cmd_post(args) -> int:
    cfg = _config(args)
    src = Path(args.input)
    meta = read_json(src / "prtf_raw.json")
    freqs = np.asarray(meta["frequencies_hz"])
    raw = read_complex(src / "prtf_raw", (len(freqs), meta["n_directions"]))
    if not np.all(np.isfinite(raw)):
        raise PipelineError("raw set has missing frequencies; cannot equalize")
    g = cfg.raw["grid"]
    grid = icosphere(int(g["subdivision_frequency"]), float(g["radius_m"]))
    if grid.n_directions != raw.shape[1]:
        raise PipelineError(f"config grid has {grid.n_directions} directions, set has {raw.shape[1]}")
    out = Path(args.out)
    if args.equalize:
        eq, ctf = diffuse_field_equalize(PrtfSet(raw, freqs), grid.weights, int(cfg.raw["post"]["cepstrum_pad_factor"]))
        write_complex(out / "prtf_eq", eq.values)
        write_complex(out / "ctf", ctf.values)
        write_json(out / "prtf_eq.json", {"frequencies_hz": [float(f) for f in eq.frequencies], "n_directions": grid.n_directions})
    return EXIT_OK


def cmd_stats(args) -> int:
    model = load_model(args.model) if args.model else None
    out = {}
    if args.cpv:
        if model is None:
            raise PipelineError("--cpv needs --model")
        out["cpv"] = [float(c) for c in cpv_curve(model)]
    if args.royston:
        data = np.loadtxt(args.royston, delimiter=",", ndmin=2)
        rep: NormalityReport = royston_test(data)
        out["royston"] = rep.as_dict()
    if args.shapiro:
        w, p = shapiro_wilk(np.loadtxt(args.shapiro, delimiter=",").ravel())
        out["shapiro_wilk"] = {"W": w, "p": p}
    if args.archive:
        out["archive"] = read_json(Path(args.archive) / "stats" / "stats.json")
    _print_json(out)
    return EXIT_OK


def _report(result) -> int:
    print(f"{result.root}: {result.n_drawn} drawn, {result.n_kept} kept, {result.n_complete} complete, "
          f"{result.n_failed} failed, {result.n_units_computed} units computed")
    return result.exit_code


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    result = run_pipeline(cfg, args.out, jobs=args.jobs, deterministic=args.deterministic)
    if args.plots:
        from .plots import emit_plots
        emit_plots(result.root)
    return _report(result)


def cmd_resume(args) -> int:
    cfg = _config(args)
    result = resume_pipeline(cfg, args.out, force=args.force, jobs=args.jobs, deterministic=args.deterministic)
    return _report(result)


def cmd_plots(args) -> int:
    from .plots import emit_plots

    for p in emit_plots(args.archive, args.out):
        print(p)
    return EXIT_OK


def cmd_verify(args) -> int:
    bad = Manifest.load(args.archive).verify()
    for rel in bad:
        print(f"checksum mismatch: {rel}")
    return EXIT_FATAL if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="toy", help="config JSON file, or a built-in name (toy, widespread)")
    common.add_argument("--seed", type=int, default=None, help="override the draw seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for frequency units")
    common.add_argument("--deterministic", action="store_true", help="fixed serial scheduling (forces --jobs 1)")
    common.add_argument("--force", action="store_true", help="resume even when the config hash differs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pinnagen", description="Synthetic pinna shapes and simulated transfer functions.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("toy", parents=[common], help="write the synthetic training dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-subjects", type=int, default=12)
    p.add_argument("--n-rings", type=int, default=10)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("fit", parents=[common], help="fit the PCA shape model to a registered dataset")
    p.add_argument("--dataset", required=True, help="dataset directory or dataset.json")
    p.add_argument("--out", required=True, help="model directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("draw", parents=[common], help="draw random PC weights and synthesize shapes")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--dataset", help="apply the mesh quality gate using this dataset's topology")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_draw)

    p = sub.add_parser("mesh", parents=[common], help="build, close, grade and check a mesh")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh", help="existing PLY/OFF mesh")
    src.add_argument("--dataset", help="dataset supplying topology and boundary loops")
    p.add_argument("--shape", help="shapes .f8 file (rows of 3 n_v coordinates); default: the dataset itself")
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--close", action="store_true", help="cap the canal and attach the cylinder base")
    p.add_argument("--grade", type=int, metavar="BAND", help="grade for this band index of the config")
    p.add_argument("--check", action="store_true", help="print the quality report; exit 2 if not simulation-ready")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("simulate", parents=[common], help="simulate the sweep on one mesh per band")
    p.add_argument("--mesh", nargs="+", required=True)
    p.add_argument("--center", nargs=3, type=float, metavar=("X", "Y", "Z"), help="grid center in mm")
    p.add_argument("--bundle", help="write an external-solver bundle here instead of solving")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("post", parents=[common], help="DC-pad and diffuse-field equalize a raw set")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--equalize", action="store_true")
    p.set_defaults(func=cmd_post)

    p = sub.add_parser("stats", parents=[common], help="CPV and normality tests")
    p.add_argument("--model")
    p.add_argument("--cpv", action="store_true")
    p.add_argument("--royston", metavar="CSV", help="samples in rows, variables in columns")
    p.add_argument("--shapiro", metavar="CSV")
    p.add_argument("--archive", help="print the stats report of an archive")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("pipeline", parents=[common], help="run the full generation protocol")
    p.add_argument("--out", help="archive directory (default: the config's output)")
    p.add_argument("--plots", action="store_true", help="emit plot data after the run")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("resume", parents=[common], help="continue an interrupted archive")
    p.add_argument("--out", help="archive directory (default: the config's output)")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("plots", parents=[common], help="CSV and PNG plot data from an archive")
    p.add_argument("archive")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plots)

    p = sub.add_parser("verify", parents=[common], help="check archive checksums")
    p.add_argument("archive")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PipelineError, OSError, ValueError, KeyError, ClosingError, RemeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
