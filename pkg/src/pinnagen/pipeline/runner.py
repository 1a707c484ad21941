"""End-to-end generation: fit, draw, gate, mesh, simulate, post-process, analyze.

Work is organized in (subject, frequency) units. Each finished unit is written
atomically and appended to a ledger, so an interrupted run resumes by
recomputing only what is missing. The manifest is rewritten atomically after
every subject.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from ..bem.prtf import simulate_frequency, source_centroid
from ..bem.solver import BemError
from ..mesh.closing import ClosingError, build_mesh, close_mesh
from ..mesh.quality import check_mesh, elements_per_wavelength
from ..mesh.remesh import RemeshError, SizingField, compliance, grade_mesh
from ..mesh.trimesh import TriMesh, read_ply, write_ply
from ..post import PrtfSet, diffuse_field_equalize, log_magnitude
from ..shape_model import (
    RegisteredPointCloudSet,
    fit_pca,
    fit_shape_model,
    load_dataset,
    load_model,
    project,
    save_dataset,
    save_model,
    vertices_from_flat,
)
from ..sphgrid import icosphere, write_grid_csv
from ..stats import compare_cpv, cpv_csv, fit_prtf_model, flatten_log_magnitude, royston_test
from ..synthesis import DrawBatch, draw_pc_weights, draw_until_kept, gate_report, quality_filter, synthesize_shapes
from ..toy import toy_dataset
from .archive import (
    Manifest,
    UnitLedger,
    read_array,
    read_json,
    sha256_file,
    write_array,
    write_complex,
    write_json,
)
from .config import PipelineConfig

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


class PipelineError(RuntimeError):
    """Global failure: bad config, unreadable dataset, archive mismatch."""


class ConfigMismatch(PipelineError):
    pass


@dataclass
class RunResult:
    root: Path
    n_drawn: int
    n_kept: int
    n_complete: int
    n_failed: int
    n_units_computed: int

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.n_failed else EXIT_OK


def subject_id(index: int) -> str:
    return f"synth{index:05d}"


# ----------------------------------------------------------------------------
# Stages


def _load_or_make_dataset(cfg: PipelineConfig, root: Path, manifest: Manifest) -> RegisteredPointCloudSet:
    source = cfg.raw["dataset"]
    try:
        if "generator" in source:
            target = root / "dataset"
            if (target / "dataset.json").exists():
                return load_dataset(target)
            ds = toy_dataset(source.get("n_subjects", 12), source.get("seed", 7), source.get("n_rings", 10))
            save_dataset(ds, target)
            manifest.record_array("dataset/shapes.f8", sha256_file(target / "shapes.f8"), ds.data.shape)
            return ds
        return load_dataset(cfg.dataset_path())
    except (OSError, ValueError, KeyError) as exc:
        raise PipelineError(f"cannot load dataset: {exc}") from exc


def _boundary(cfg: PipelineConfig, ds: RegisteredPointCloudSet) -> tuple[list[int], list[int]]:
    src = cfg.raw["source"]
    try:
        return ds.boundary_loops[src["canal_loop"]], ds.boundary_loops[src["outer_loop"]]
    except KeyError as exc:
        raise PipelineError(f"dataset manifest lacks boundary loop {exc}") from None


def _model(ds: RegisteredPointCloudSet, root: Path, manifest: Manifest):
    d = root / "model"
    if (d / "model.json").exists() and "model/basis.f8" in manifest.data["arrays"]:
        return load_model(d)
    model = fit_shape_model(ds)
    save_model(model, d)
    for name, shape in (("mean", model.mean.shape), ("basis", model.basis.shape), ("sigmas", model.sigmas.shape)):
        manifest.record_array(f"model/{name}.f8", sha256_file(d / f"{name}.f8"), shape)
    return model


def _draws(cfg: PipelineConfig, model, ds: RegisteredPointCloudSet, root: Path, manifest: Manifest) -> DrawBatch:
    d = root / "draws"
    if (d / "draws.json").exists() and "draws/weights.f8" in manifest.data["arrays"]:
        meta = read_json(d / "draws.json")
        w = read_array(d / "weights.f8", (meta["count"], model.n_components))
        return DrawBatch(w, meta["seed"], np.array(meta["kept"], dtype=bool), meta["reasons"], meta["sub_seeds"])
    if cfg.count == 0:
        batch = DrawBatch(np.zeros((0, model.n_components)), cfg.seed)
    elif cfg.raw["draw"].get("until_kept", False):
        batch = draw_until_kept(model, ds.topology, cfg.count, cfg.seed)
    else:
        batch = draw_pc_weights(model, cfg.count, cfg.seed)
        quality_filter(synthesize_shapes(model, batch), ds.topology, batch)
    digest = write_array(d / "weights.f8", batch.weights)
    manifest.record_array("draws/weights.f8", digest, batch.weights.shape)
    report = gate_report(batch)
    write_json(
        d / "draws.json",
        {
            "count": batch.count,
            "seed": batch.seed,
            "sub_seeds": batch.sub_seeds,
            "kept": [bool(k) for k in batch.kept_mask],
            "reasons": batch.rejection_reasons,
            "gate": report.as_dict(),
        },
    )
    manifest.data["gate"] = {"n_drawn": report.n_drawn, "n_kept": report.n_kept, "rejection_rate": report.rejection_rate}
    return batch


def _mesh_subject(cfg: PipelineConfig, shape: np.ndarray, ds, loops, sdir: Path, subj: dict) -> list[TriMesh]:
    """Closed, graded, checked mesh per band (reused from disk when intact)."""
    bands = cfg.bands
    meshes: list[TriMesh | None] = [None] * len(bands)
    for b in range(len(bands)):
        name = f"mesh_band{b}.ply"
        p = sdir / name
        if name in subj["files"] and p.exists() and sha256_file(p) == subj["files"][name]:
            meshes[b] = read_ply(p)
    if all(m is not None for m in meshes):
        return meshes
    closed = close_mesh(build_mesh(shape, ds.topology), [loops[0], loops[1]], cfg.base)
    focus = source_centroid(closed)
    min_epw = float(cfg.raw["bem"]["min_elements_per_wavelength"])
    c = cfg.medium.speed_of_sound
    for b, band in enumerate(bands):
        if meshes[b] is not None:
            continue
        grading = band.grading.with_focus(focus)
        graded = grade_mesh(closed, grading)
        report = check_mesh(graded)
        if not report.simulation_ready:
            raise RemeshError(f"band {b} mesh is not simulation-ready: {report.as_dict()}")
        epw = elements_per_wavelength(graded, band.f_high, c)
        if epw < min_epw:
            raise RemeshError(f"band {b}: {epw:.2f} elements per wavelength at {band.f_high:g} Hz (need {min_epw:g})")
        write_ply(graded, sdir / f"mesh_band{b}.ply")
        info = report.as_dict()
        info.update({"band_hz": [band.f_low, band.f_high], "elements_per_wavelength_at_top": epw,
                     "edge_compliance": compliance(graded, SizingField(grading, closed.vertices))})
        subj["files"][f"mesh_band{b}.json"] = write_json(sdir / f"mesh_band{b}.json", info)
        subj["files"][f"mesh_band{b}.ply"] = sha256_file(sdir / f"mesh_band{b}.ply")
        meshes[b] = graded
    return meshes


def _solve_unit(args):
    mesh, f, grid, center, v_n, medium, n_chief, chief_seed, min_epw = args
    try:
        # one BLAS thread per unit keeps reductions, and so the bytes, independent of --jobs
        with threadpool_limits(limits=1, user_api="blas"):
            res = simulate_frequency(mesh, f, grid, center, v_n, medium, n_chief, chief_seed, min_epw)
    except BemError as exc:
        return None, str(exc), None
    return res.values, None, {"residual": res.residual, "condition": res.condition, "n_faces": res.n_faces}


def _postprocess(cfg: PipelineConfig, raw: np.ndarray, freqs: np.ndarray, grid, sdir: Path, subj: dict) -> np.ndarray:
    prtf = PrtfSet(raw, freqs)
    subj["files"].update(write_complex(sdir / "prtf_raw", raw))
    eq, ctf = diffuse_field_equalize(prtf, grid.weights, int(cfg.raw["post"]["cepstrum_pad_factor"]))
    subj["files"].update(write_complex(sdir / "prtf_eq", eq.values))
    subj["files"].update(write_complex(sdir / "ctf", ctf.values))
    return eq.values


def _stats(cfg: PipelineConfig, root: Path, manifest: Manifest, complete: list[str], shapes: dict[str, np.ndarray], eq_sets: dict[str, np.ndarray]):
    d = root / "stats"
    if len(complete) < 2:
        write_json(d / "stats.json", {"skipped": f"{len(complete)} complete subject(s); need at least 2"})
        return
    include_dc = bool(cfg.raw["post"]["include_dc"])
    q = [log_magnitude(eq_sets[s]) if include_dc else log_magnitude(eq_sets[s][1:]) for s in complete]
    prtf_model = fit_prtf_model(q)
    save_model(prtf_model, d / "prtf_model", kind="prtf")
    shape_model = fit_pca(np.vstack([shapes[s] for s in complete]))
    thresholds = [float(t) for t in cfg.raw["stats"]["cpv_thresholds"]]
    try:
        table = compare_cpv({"shape": shape_model, "prtf": prtf_model}, thresholds)
    except ValueError as exc:
        write_json(d / "stats.json", {"skipped": str(exc)})
        return
    (d / "cpv.csv").write_text(cpv_csv(table))
    reports = {}
    for name, model, data in (
        ("shape", shape_model, np.vstack([shapes[s] for s in complete])),
        ("prtf", prtf_model, np.vstack([flatten_log_magnitude(x) for x in q])),
    ):
        w = project(model, data)
        spread = w.std(axis=0)
        keep = spread > 1e-9 * max(spread.max(), 1e-300)
        try:
            reports[name] = royston_test(w[:, keep]).as_dict() if keep.sum() and len(w) >= 3 else None
        except ValueError as exc:
            reports[name] = {"error": str(exc)}
    write_json(
        d / "stats.json",
        {
            "subjects": complete,
            "include_dc": include_dc,
            "flattening": "direction-major: index = d * n_f + f",
            "cpv_thresholds": thresholds,
            "components_needed": table.p_needed,
            "royston": reports,
        },
    )


# ----------------------------------------------------------------------------


def run_pipeline(
    cfg: PipelineConfig,
    out: str | Path | None = None,
    resume: bool = False,
    force: bool = False,
    jobs: int = 1,
    deterministic: bool = False,
    on_unit: Callable[[str, int], None] | None = None,
    on_subject: Callable[[str], None] | None = None,
) -> RunResult:
    root = cfg.output_dir(out)
    if Manifest.exists(root):
        if not resume:
            raise PipelineError(f"{root} already holds an archive; use resume")
        manifest = Manifest.load(root)
        if manifest.data.get("config_hash") != cfg.hash and not force:
            raise ConfigMismatch(
                f"config hash {cfg.hash[:12]} differs from the archive's {str(manifest.data.get('config_hash'))[:12]}; "
                "refusing to resume (use --force to override)"
            )
    else:
        root.mkdir(parents=True, exist_ok=True)
        manifest = Manifest(root)
    if deterministic:
        jobs = 1
    manifest.data.update({"config_hash": cfg.hash, "seed": cfg.seed, "status": "running"})
    write_json(root / "config.json", cfg.raw)

    ds = _load_or_make_dataset(cfg, root, manifest)
    loops = _boundary(cfg, ds)
    model = _model(ds, root, manifest)
    g = cfg.raw["grid"]
    grid = icosphere(int(g["subdivision_frequency"]), float(g["radius_m"]))
    write_grid_csv(grid, root / "grid.csv")
    manifest.record_array("grid.csv", sha256_file(root / "grid.csv"))
    batch = _draws(cfg, model, ds, root, manifest)
    shapes = synthesize_shapes(model, batch) if batch.count else np.zeros((0, model.dim))

    sweep = cfg.sweep
    freqs = sweep.frequencies
    which = sweep.band_indices()
    center = vertices_from_flat(model.mean).mean(axis=0)
    manifest.data.update(
        {
            "frequencies_hz": [float(f) for f in freqs],
            "n_directions": grid.n_directions,
            "grid": {"subdivision_frequency": int(g["subdivision_frequency"]), "radius_m": float(g["radius_m"])},
            "grid_center_mm": [float(x) for x in center],
            "n_vertices": ds.n_vertices,
        }
    )
    for i in range(batch.count):
        subj = manifest.subject(subject_id(i))
        subj["draw_index"] = i
        if not batch.kept_mask[i]:
            subj.update({"status": "rejected", "reasons": batch.rejection_reasons[i]})
    manifest.save()

    ledger = UnitLedger(root / "units.jsonl")
    bem = cfg.raw["bem"]
    v_n = float(cfg.raw["source"]["v_n"])
    n_computed = 0
    complete: list[str] = []
    eq_sets: dict[str, np.ndarray] = {}
    shape_rows: dict[str, np.ndarray] = {}
    n_failed = 0
    pool = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        for i in batch.kept_indices():
            sid = subject_id(int(i))
            sdir = root / "subjects" / sid
            subj = manifest.subject(sid)
            shape_rows[sid] = shapes[i]
            if subj["status"] == "complete":
                eq_sets[sid] = _read_eq(sdir, len(freqs) + 1, grid.n_directions)
                complete.append(sid)
                continue
            subj["files"]["shape.f8"] = write_array(sdir / "shape.f8", shapes[i])
            try:
                meshes = _mesh_subject(cfg, shapes[i], ds, loops, sdir, subj)
            except (ClosingError, RemeshError, BemError, ValueError) as exc:
                subj.update({"status": "failed", "reasons": [f"meshing: {exc}"]})
                n_failed += 1
                manifest.save()
                continue

            raw = np.empty((len(freqs), grid.n_directions), dtype=complex)
            todo = []
            for k in range(len(freqs)):
                rec = ledger.get(sid, k)
                p = sdir / "units" / f"f{k:03d}.f8"
                if rec is not None and p.exists() and sha256_file(p) == rec["sha256"]:
                    planes = read_array(p, (2, grid.n_directions))
                    raw[k] = planes[0] + 1j * planes[1]
                else:
                    todo.append(k)
            args = [
                (meshes[which[k]], float(freqs[k]), grid, center, v_n, cfg.medium,
                 int(bem["n_chief"]), int(bem["chief_seed"]), float(bem["min_elements_per_wavelength"]))
                for k in todo
            ]
            results = pool.map(_solve_unit, args) if pool else map(_solve_unit, args)
            errors = []
            for k, (values, err, info) in zip(todo, results):
                if err is not None:
                    errors.append(f"{freqs[k]:g} Hz: {err}")
                    continue
                raw[k] = values
                digest = write_array(sdir / "units" / f"f{k:03d}.f8", np.vstack([values.real, values.imag]))
                ledger.append({"subject": sid, "index": k, "frequency_hz": float(freqs[k]), "band": int(which[k]), "sha256": digest, **info})
                n_computed += 1
                if on_unit:
                    on_unit(sid, k)
            if errors:
                subj.update({"status": "partial", "reasons": errors})
                n_failed += 1
                manifest.save()
                continue
            eq_sets[sid] = _postprocess(cfg, raw, freqs, grid, sdir, subj)
            subj["status"] = "complete"
            subj.pop("reasons", None)
            complete.append(sid)
            manifest.save()
            if on_subject:
                on_subject(sid)
    finally:
        if pool:
            pool.shutdown()

    _stats(cfg, root, manifest, complete, shape_rows, eq_sets)
    for p in sorted((root / "stats").rglob("*.f8")):
        manifest.record_array(str(p.relative_to(root)), sha256_file(p))
    manifest.data["status"] = "partial" if n_failed else "complete"
    manifest.data["n_complete"] = len(complete)
    manifest.save()
    return RunResult(root, batch.count, int(batch.kept_mask.sum()), len(complete), n_failed, n_computed)


def _read_eq(sdir: Path, n_rows: int, n_d: int) -> np.ndarray:
    re = read_array(sdir / "prtf_eq_re.f8", (n_rows, n_d))
    im = read_array(sdir / "prtf_eq_im.f8", (n_rows, n_d))
    return re + 1j * im


def resume_pipeline(cfg: PipelineConfig, out: str | Path | None = None, force: bool = False, **kwargs) -> RunResult:
    root = cfg.output_dir(out)
    if not Manifest.exists(root):
        raise PipelineError(f"no archive manifest under {root}")
    return run_pipeline(cfg, out, resume=True, force=force, **kwargs)
