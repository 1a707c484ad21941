import json
import shutil

import numpy as np
import pytest
from conftest import sphere_mesh

from pinnagen.cli import build_parser, main
from pinnagen.mesh import LABEL_SOURCE, TriMesh, write_mesh
from pinnagen.pipeline import PipelineConfig


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


@pytest.fixture
def small_config(tmp_path, toy_config):
    """Two frequencies on a 42-point grid: enough to drive simulate and post quickly."""
    raw = json.loads(json.dumps(toy_config.raw))
    raw["sweep"] = {"f_start": 400, "f_step": 400, "n_f": 2}
    raw["bands"] = [{"f_low": 400, "f_high": 800, "mode": "uniform", "target_edge_min": 10}]
    raw["grid"] = {"subdivision_frequency": 2, "radius_m": 2.0}
    path = tmp_path / "small.json"
    path.write_text(json.dumps(raw))
    return path


def test_parser_lists_verbs():
    text = build_parser().format_help()
    for verb in ("toy", "fit", "draw", "mesh", "simulate", "post", "stats", "pipeline", "resume", "plots", "verify"):
        assert verb in text


def test_shape_workflow(tmp_path, capsys):
    code, out = run(capsys, "toy", "--out", tmp_path / "ds", "--n-subjects", 6)
    assert code == 0 and "6 shapes" in out
    code, out = run(capsys, "fit", "--dataset", tmp_path / "ds", "--out", tmp_path / "model")
    assert code == 0
    fit = json.loads(out)
    assert fit["n_components"] == 5 and fit["cpv"][-1] == 100.0
    code, out = run(capsys, "draw", "--model", tmp_path / "model", "--count", 4, "--seed", 3,
                    "--dataset", tmp_path / "ds", "--out", tmp_path / "draws")
    assert code == 0 and "4 drawn" in out
    meta = json.loads((tmp_path / "draws" / "draws.json").read_text())
    assert meta["gated"] and len(meta["kept"]) == 4
    shapes = np.fromfile(tmp_path / "draws" / "shapes.f8", dtype="<f8")
    assert shapes.size == 4 * meta["dim"]

    code, out = run(capsys, "mesh", "--dataset", tmp_path / "ds", "--shape", tmp_path / "draws" / "shapes.f8",
                    "--row", 1, "--close", "--check", "--out", tmp_path / "closed.ply")
    report = json.loads(out)
    assert code == (0 if report["simulation_ready"] else 2)
    assert report["is_watertight"] and (tmp_path / "closed.ply").exists()

    code, out = run(capsys, "mesh", "--dataset", tmp_path / "ds", "--check")
    assert code == 2 and not json.loads(out)["is_watertight"]

    code, out = run(capsys, "stats", "--model", tmp_path / "model", "--cpv")
    assert code == 0 and json.loads(out)["cpv"] == fit["cpv"]


def test_bad_inputs_are_fatal(tmp_path, capsys):
    assert run(capsys, "fit", "--dataset", tmp_path / "missing", "--out", tmp_path / "m")[0] == 1
    (tmp_path / "bad.json").write_text('{"schema": "pinnagen.config/1"}')
    assert run(capsys, "pipeline", "--config", tmp_path / "bad.json", "--out", tmp_path / "a")[0] == 1
    assert not (tmp_path / "a").exists()
    with pytest.raises(SystemExit):
        main(["nonsense"])


def test_simulate_and_post(tmp_path, capsys, small_config):
    mesh = sphere_mesh(50.0, 4)
    c = mesh.centroids()
    labels = np.where(c[:, 2] / np.linalg.norm(c, axis=1) > np.cos(np.radians(30)), LABEL_SOURCE, 0)
    write_mesh(TriMesh(mesh.vertices, mesh.faces, labels), tmp_path / "cap.ply")
    code, _ = run(capsys, "simulate", "--config", small_config, "--mesh", tmp_path / "cap.ply",
                  "--center", 0, 0, 0, "--out", tmp_path / "sim")
    assert code == 0
    meta = json.loads((tmp_path / "sim" / "prtf_raw.json").read_text())
    assert meta["frequencies_hz"] == [400.0, 800.0] and meta["errors"] == []
    code, _ = run(capsys, "post", "--config", small_config, "--in", tmp_path / "sim", "--out", tmp_path / "eq", "--equalize")
    assert code == 0
    eq = np.fromfile(tmp_path / "eq" / "prtf_eq_re.f8", dtype="<f8")
    assert eq.size == 3 * 42

    code, out = run(capsys, "simulate", "--config", small_config, "--mesh", tmp_path / "cap.ply",
                    "--bundle", tmp_path / "bundle")
    assert code == 0 and (tmp_path / "bundle" / "mesh_band0.ply").exists()


def test_coarse_mesh_simulation_is_partial(tmp_path, capsys, small_config):
    mesh = sphere_mesh(500.0, 1)  # edges near 0.55 m: under one element per wavelength
    labels = np.zeros(mesh.n_faces, dtype=int)
    labels[0] = LABEL_SOURCE
    write_mesh(TriMesh(mesh.vertices, mesh.faces, labels), tmp_path / "coarse.ply")
    code, _ = run(capsys, "simulate", "--config", small_config, "--mesh", tmp_path / "coarse.ply",
                  "--out", tmp_path / "sim")
    assert code == 2
    assert json.loads((tmp_path / "sim" / "prtf_raw.json").read_text())["errors"]


def test_normality_from_csv(tmp_path, capsys):
    x = np.random.default_rng(0).normal(size=(60, 3))
    np.savetxt(tmp_path / "x.csv", x, delimiter=",")
    np.savetxt(tmp_path / "y.csv", x[:, 0], delimiter=",")
    code, out = run(capsys, "stats", "--royston", tmp_path / "x.csv", "--shapiro", tmp_path / "y.csv")
    res = json.loads(out)
    assert code == 0
    assert res["royston"]["dim"] == 3 and 0 <= res["royston"]["p_value"] <= 1
    assert 0 <= res["shapiro_wilk"]["p"] <= 1


def test_archive_verbs(tmp_path, capsys, toy_run_repeat):
    root = tmp_path / "copy"
    shutil.copytree(toy_run_repeat.root, root)
    code, out = run(capsys, "resume", "--out", root, "--deterministic")
    assert code == 0 and "0 units computed" in out
    assert run(capsys, "resume", "--out", root, "--seed", 99)[0] == 1
    assert run(capsys, "pipeline", "--out", root)[0] == 1

    code, out = run(capsys, "plots", root, "--out", tmp_path / "plots")
    assert code == 0 and "cpv.csv" in out
    code, out = run(capsys, "stats", "--archive", root)
    assert code == 0 and "archive" in json.loads(out)

    assert run(capsys, "verify", root)[0] == 0
    unit = next((root / "subjects").rglob("f000.f8"))
    data = bytearray(unit.read_bytes())
    data[0] ^= 1
    unit.write_bytes(bytes(data))
    code, out = run(capsys, "verify", root)
    assert code == 1 and "f000.f8" in out


def test_widespread_config_loads(capsys):
    assert PipelineConfig.load("widespread").count > 0
    code, _ = run(capsys, "verify", "/nonexistent")
    assert code == 1
