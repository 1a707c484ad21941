import copy
import csv
import json
import shutil
import warnings

import numpy as np
import pytest

from pinnagen.mesh import read_mesh, self_intersections
from pinnagen.pipeline import ConfigError, ConfigMismatch, PipelineConfig, PipelineError, resume_pipeline, run_pipeline
from pinnagen.pipeline.archive import (
    Manifest,
    UnitLedger,
    read_array,
    read_complex,
    write_array,
    write_complex,
)
from pinnagen.pipeline.runner import subject_id
from pinnagen.plots import emit_plots
from pinnagen.post import log_magnitude
from pinnagen.shape_model import flat_from_vertices, save_dataset, vertices_from_flat
from pinnagen.sphgrid import read_grid_csv
from pinnagen.toy import toy_dataset


def file_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ----------------------------------------------------------------------------
# configuration


def test_builtin_configs():
    toy = PipelineConfig.load("toy")
    assert toy.count == 5 and toy.sweep.n_f == 10
    assert toy.sweep.frequencies.max() <= 4000
    assert toy.raw["grid"]["subdivision_frequency"] == 4
    wide = PipelineConfig.load("widespread")
    assert wide.sweep.n_f == 160
    assert wide.sweep.f_start == 100 and wide.sweep.f_step == 100
    assert wide.raw["grid"] == {"subdivision_frequency": 16, "radius_m": 2.0}
    bands = wide.bands
    assert [(b.f_low, b.f_high) for b in bands] == [(100, 400), (500, 2000), (2100, 3500), (3600, 16000)]
    assert [(b.grading.mode, b.grading.target_edge_min, b.grading.target_edge_max) for b in bands] == [
        ("uniform", 10, 10), ("uniform", 5, 5), ("progressive", 2, 5), ("progressive", 0.7, 5)]


def test_hash_binds_protocol_not_location():
    raw = json.loads(PipelineConfig.load("toy").source_path.read_text())
    a = PipelineConfig.from_dict(raw)
    moved = dict(raw, output="elsewhere", description="same protocol")
    assert PipelineConfig.from_dict(moved).hash == a.hash
    assert PipelineConfig.from_dict(raw, seed=a.seed + 1).hash != a.hash


def test_invalid_configs():
    raw = json.loads(PipelineConfig.load("toy").source_path.read_text())
    bad = copy.deepcopy(raw)
    bad["grid"]["subdivision_frequency"] = 0
    with pytest.raises(ConfigError, match="grid"):
        PipelineConfig.from_dict(bad)
    gap = copy.deepcopy(raw)
    gap["bands"][1]["f_low"] = 2800
    with pytest.raises(ConfigError, match="2400"):
        PipelineConfig.from_dict(gap)
    with pytest.raises(ConfigError):
        PipelineConfig.load("/nonexistent/config.json")


# ----------------------------------------------------------------------------
# archive primitives


def test_array_round_trip_is_byte_identical(tmp_path, rng):
    x = rng.normal(size=(7, 5)) + 1j * rng.normal(size=(7, 5))
    write_complex(tmp_path / "a", x)
    back = read_complex(tmp_path / "a", (7, 5))
    assert np.array_equal(back, x)
    write_complex(tmp_path / "b", back)
    for part in ("_re.f8", "_im.f8"):
        assert (tmp_path / f"a{part}").read_bytes() == (tmp_path / f"b{part}").read_bytes()
    raw = (tmp_path / "a_re.f8").read_bytes()
    assert raw == x.real.astype("<f8").tobytes()
    with pytest.raises(ValueError):
        read_array(tmp_path / "a_re.f8", (6, 5))


def test_ledger_drops_torn_line(tmp_path):
    led = UnitLedger(tmp_path / "units.jsonl")
    led.append({"subject": "s", "index": 0, "sha256": "x"})
    with open(tmp_path / "units.jsonl", "a") as fh:
        fh.write('{"subject": "s", "ind')
    again = UnitLedger(tmp_path / "units.jsonl")
    assert list(again.done) == [("s", 0)]
    again.append({"subject": "s", "index": 1, "sha256": "y"})
    lines = (tmp_path / "units.jsonl").read_text().splitlines()
    assert len(lines) == 2 and all(json.loads(line) for line in lines)


def test_manifest_detects_corruption(tmp_path):
    m = Manifest(tmp_path)
    digest = write_array(tmp_path / "x.f8", np.arange(4.0))
    m.record_array("x.f8", digest, (4,))
    m.save()
    assert Manifest.load(tmp_path).verify() == []
    (tmp_path / "x.f8").write_bytes(np.arange(1.0, 5.0).tobytes())
    assert Manifest.load(tmp_path).verify() == ["x.f8"]


# ----------------------------------------------------------------------------
# end-to-end toy run


def test_toy_archive_invariants(toy_run, toy_config):
    result, _ = toy_run
    root = result.root
    assert result.exit_code == 0
    assert result.n_drawn == 5 and result.n_complete <= 5
    manifest = Manifest.load(root)
    assert manifest.data["schema"] == "pinnagen.archive/1"
    assert manifest.data["config_hash"] == toy_config.hash
    assert manifest.verify() == []
    grid = read_grid_csv(root / "grid.csv")
    n_f = len(manifest.data["frequencies_hz"])
    for sid, subj in manifest.data["subjects"].items():
        if subj["status"] == "rejected":
            continue
        assert subj["status"] == "complete"
        sdir = root / "subjects" / sid
        assert (sdir / "shape.f8").exists()
        eq = read_complex(sdir / "prtf_eq", (n_f + 1, grid.n_directions))
        raw = read_complex(sdir / "prtf_raw", (n_f, grid.n_directions))
        assert np.all(np.isfinite(raw))
        np.testing.assert_allclose(log_magnitude(eq) @ grid.weights, 0.0, atol=1e-6)
        for b in range(len(toy_config.bands)):
            assert self_intersections(read_mesh(sdir / f"mesh_band{b}.ply")) == []
    stats = json.loads((root / "stats" / "stats.json").read_text())
    assert stats["flattening"].startswith("direction-major")
    assert (root / "stats" / "cpv.csv").read_text().splitlines()[-1].endswith(",100.0,100.0")


def test_determinism(toy_run, toy_run_repeat):
    a, b = toy_run[0].root, toy_run_repeat.root
    assert json.loads((a / "manifest.json").read_text()) == json.loads((b / "manifest.json").read_text())
    fa, fb = file_bytes(a / "subjects"), file_bytes(b / "subjects")
    assert fa == fb


def test_resume_of_complete_archive_does_nothing(toy_run_repeat, toy_config):
    root = toy_run_repeat.root
    before = file_bytes(root)
    result = resume_pipeline(toy_config, root, deterministic=True)
    assert result.n_units_computed == 0
    assert file_bytes(root) == before


def test_resume_refuses_changed_seed(toy_run_repeat, toy_config):
    changed = PipelineConfig.from_dict(toy_config.raw, seed=toy_config.seed + 1)
    with pytest.raises(ConfigMismatch, match="refusing"):
        resume_pipeline(changed, toy_run_repeat.root)


def test_fresh_run_refuses_existing_archive(toy_run_repeat, toy_config):
    with pytest.raises(PipelineError):
        run_pipeline(toy_config, toy_run_repeat.root)


def test_interrupted_run_resumes(toy_run_interrupted, toy_run):
    root, snapshot, resumed = toy_run_interrupted
    done_before = sorted({key.split("/")[1] for key in snapshot if key.endswith("prtf_eq_re.f8")})
    assert done_before == [subject_id(0), subject_id(1)]
    after = file_bytes(root)
    for key, raw in snapshot.items():
        if key.split("/")[1] in done_before:
            assert after[key] == raw, key
    assert resumed.n_complete == toy_run[0].n_complete
    full = file_bytes(toy_run[0].root)
    subjects = {k: v for k, v in after.items() if k.startswith("subjects/")}
    assert subjects == {k: v for k, v in full.items() if k.startswith("subjects/")}


def test_parallel_jobs_match_serial(tmp_path, toy_run, toy_config):
    raw = copy.deepcopy(toy_config.raw)
    raw["draw"]["count"] = 1
    cfg = PipelineConfig.from_dict(raw)
    result = run_pipeline(cfg, tmp_path / "par", jobs=2)
    assert result.n_complete == 1
    sid = subject_id(0)
    a = file_bytes(tmp_path / "par" / "subjects" / sid / "units")
    b = file_bytes(toy_run[0].root / "subjects" / sid / "units")
    assert a == b


@pytest.fixture(scope="module")
def rejected_archive(tmp_path_factory, toy_config):
    """A dataset whose every subject folds through itself: nothing survives the gate."""
    base = tmp_path_factory.mktemp("adversarial")
    ds = toy_dataset()
    loops = np.concatenate(list(ds.boundary_loops.values()))
    for row in ds.data:
        v = vertices_from_flat(row)
        interior = np.setdiff1d(np.arange(len(v)), loops)
        i = interior[len(interior) // 2]
        v[i] = v[i] - 2.5 * (v[i] - v.mean(axis=0))
        row[:] = flat_from_vertices(v)
    save_dataset(ds, base / "dataset")
    raw = copy.deepcopy(toy_config.raw)
    raw["dataset"] = {"path": str(base / "dataset" / "dataset.json")}
    cfg = PipelineConfig.from_dict(raw)
    return run_pipeline(cfg, base / "archive", deterministic=True)


def test_all_rejected_gives_empty_valid_archive(rejected_archive):
    result = rejected_archive
    assert result.n_kept == 0 and result.n_complete == 0
    assert result.exit_code == 0
    manifest = Manifest.load(result.root)
    assert manifest.verify() == []
    assert manifest.data["gate"]["rejection_rate"] == 1.0
    assert all(s["status"] == "rejected" for s in manifest.data["subjects"].values())
    draws = json.loads((result.root / "draws" / "draws.json").read_text())
    assert all(any(r.startswith("self-intersections") for r in reasons) for reasons in draws["reasons"])


def test_plots_skip_missing_sections(rejected_archive, tmp_path):
    with pytest.warns(UserWarning, match="no complete subjects"):
        files = emit_plots(rejected_archive.root, tmp_path)
    names = {p.name for p in files}
    assert "pc_sweep.csv" in names and "cpv.csv" in names
    assert not any(p.parent.name == "sagittal" for p in files)


def test_plots_from_toy_archive(toy_run, tmp_path):
    root = toy_run[0].root
    files = emit_plots(root, tmp_path)
    assert all(p.exists() for p in files)
    assert any(p.suffix == ".png" for p in files)
    with open(tmp_path / "cpv.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "p"
    for col in range(1, len(rows[0])):
        curve = [float(r[col]) for r in rows[1:] if r[col]]
        assert curve[-1] == 100.0 and curve == sorted(curve)
    sweep = np.loadtxt(tmp_path / "pc_sweep.csv", delimiter=",", skiprows=1)
    assert sweep.shape[1] == 1 + 3 * 6


def test_single_subject_plot(toy_run, tmp_path):
    root = tmp_path / "one"
    shutil.copytree(toy_run[0].root, root)
    manifest = Manifest.load(root)
    for sid in list(manifest.data["subjects"])[1:]:
        manifest.data["subjects"][sid]["status"] = "failed"
    manifest.save()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        files = emit_plots(root, tmp_path / "plots")
    maps = [p for p in files if p.parent.name == "sagittal" and p.suffix == ".csv"]
    assert len(maps) == 1
    table = np.loadtxt(maps[0], delimiter=",", skiprows=1)
    assert table.shape[0] == len(manifest.data["frequencies_hz"]) + 1
