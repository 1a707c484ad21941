import json

import numpy as np
import pytest
from conftest import sphere_mesh

from pinnagen.bem import (
    Band,
    BemError,
    BemProblem,
    FrequencySweep,
    Medium,
    assemble_and_solve,
    default_chief_points,
    evaluate_field,
    pulsating_sphere,
    simulate_prtf_set,
    vibrating_cap,
)
from pinnagen.bem.oracles import cap_velocity_coefficients
from pinnagen.bem.prtf import export_bem_bundle, monopole_reference
from pinnagen.bem.solver import MM, winding_number
from pinnagen.mesh import LABEL_SOURCE, GradingConfig, TriMesh
from pinnagen.post import PrtfSet, diffuse_field_equalize, log_magnitude
from pinnagen.sphgrid import icosphere

A = 0.05  # sphere radius, m


def pulsating(nu, ka, chief=0, v=1.0):
    mesh = sphere_mesh(A / MM, nu)
    k = ka / A
    cp = default_chief_points(mesh, chief) if chief else np.empty((0, 3))
    problem = BemProblem(mesh, k, np.arange(mesh.n_faces), v, cp)
    return problem, assemble_and_solve(problem)


def db_err(x, ref):
    return np.abs(20 * np.log10(np.abs(x) / np.abs(ref)))


def phase_err(x, ref):
    return np.abs(np.degrees(np.angle(x / ref)))


def test_pulsating_sphere_ka1():
    problem, sol = pulsating(6, 1.0)
    k = problem.wavenumber
    exact = pulsating_sphere(A, k, A)
    assert db_err(sol.pressure, exact).max() < 0.5
    assert phase_err(sol.pressure, exact).max() < 3.0
    pts = icosphere(2, 2.0).points()
    field = evaluate_field(problem, sol, pts)
    ref = pulsating_sphere(A, k, 2.0)
    assert db_err(field, ref).max() < 0.5
    assert phase_err(field, ref).max() < 3.0


def test_low_frequency_limit():
    medium = Medium()
    mesh = sphere_mesh(A / MM, 4)
    problem = BemProblem.from_frequency(mesh, 50.0, np.arange(mesh.n_faces), 1.0)
    sol = assemble_and_solve(problem)
    ka = problem.wavenumber * A
    expected = medium.density * medium.speed_of_sound * ka
    np.testing.assert_allclose(np.abs(sol.pressure), expected, rtol=0.05)


def test_zero_velocity_gives_zero_pressure():
    _, sol = pulsating(3, 1.0, v=0.0)
    assert np.abs(sol.pressure).max() == 0.0
    assert sol.residual_norm <= 1e-12


def test_far_field_decay():
    problem, sol = pulsating(4, 1.0)
    d = np.array([[0.3, 0.5, 0.81]])
    d /= np.linalg.norm(d)
    ratio = np.abs(evaluate_field(problem, sol, 4.0 * d)) / np.abs(evaluate_field(problem, sol, 2.0 * d))
    assert ratio[0] == pytest.approx(0.5, rel=0.02)


def test_linear_in_velocity():
    _, s1 = pulsating(3, 1.5, v=1.0)
    _, s2 = pulsating(3, 1.5, v=2.0)
    np.testing.assert_allclose(s2.pressure, 2 * s1.pressure, rtol=1e-10)


def test_chief_suppresses_irregular_frequency():
    problem, with_chief = pulsating(6, np.pi, chief=8)
    assert with_chief.n_chief > 0
    exact = pulsating_sphere(A, problem.wavenumber, A)
    assert db_err(with_chief.pressure, exact).max() < 1.0


def test_chief_agrees_with_plain_away_from_resonance():
    _, plain = pulsating(4, 1.0)
    _, chief = pulsating(4, 1.0, chief=8)
    assert db_err(chief.pressure, plain.pressure).max() < 0.1


def test_chief_points_are_interior():
    mesh = sphere_mesh(50.0, 3)
    cp = default_chief_points(mesh, 8, seed=0)
    assert len(cp) == 8
    assert np.all(np.linalg.norm(cp, axis=1) < 0.3 * A)
    np.testing.assert_allclose(winding_number(mesh, cp), 1.0, atol=1e-9)
    assert default_chief_points(mesh, 8, seed=0).tobytes() == cp.tobytes()


def test_field_point_inside_rejected():
    problem, sol = pulsating(3, 1.0)
    with pytest.raises(ValueError):
        evaluate_field(problem, sol, np.zeros((1, 3)))


def test_problem_validation():
    mesh = sphere_mesh(50.0, 2)
    with pytest.raises(ValueError):
        BemProblem(mesh, 1.0, [])
    with pytest.raises(ValueError):
        BemProblem(mesh, -1.0, [0])
    with pytest.raises(ValueError):
        BemProblem(mesh, 1.0, [mesh.n_faces])
    open_mesh = TriMesh(mesh.vertices, mesh.faces[1:])
    with pytest.raises(BemError):
        assemble_and_solve(BemProblem(open_mesh, 1.0, [0]))


def test_cap_series_coefficients():
    # full-sphere "cap" reduces to the monopole term only
    c = cap_velocity_coefficients(np.pi, 10)
    np.testing.assert_allclose(c, np.r_[1.0, np.zeros(9)], atol=1e-14)
    # and the series then equals the pulsating sphere
    k = 20.0
    p, _ = vibrating_cap(A, k, np.pi, 2.0, 0.3, n_terms=10)
    assert p == pytest.approx(pulsating_sphere(A, k, 2.0), rel=1e-10)


def capped_sphere(nu=6, half_angle=30.0):
    mesh = sphere_mesh(A / MM, nu)
    c = mesh.centroids()
    cos = c[:, 2] / np.linalg.norm(c, axis=1)
    labels = np.where(cos > np.cos(np.radians(half_angle)), LABEL_SOURCE, 0)
    return TriMesh(mesh.vertices, mesh.faces, labels)


def toy_sweep():
    g = GradingConfig.uniform(10.0)
    return FrequencySweep(400.0, 400.0, 10, (Band(400, 2000, g), Band(2400, 4000, g)))


@pytest.fixture(scope="module")
def cap_prtf():
    mesh = capped_sphere()
    grid = icosphere(4, 2.0)
    sweep = toy_sweep()
    prtf, errors = simulate_prtf_set([mesh, mesh], sweep, grid, center_mm=np.zeros(3))
    return mesh, grid, sweep, prtf, errors


def test_capped_sphere_prtf_is_smooth(cap_prtf):
    _, grid, sweep, prtf, errors = cap_prtf
    assert errors == []
    assert prtf.values.shape == (10, grid.n_directions)
    assert np.all(np.isfinite(prtf.values))
    np.testing.assert_array_equal(prtf.frequencies, sweep.frequencies)
    assert np.abs(np.diff(log_magnitude(prtf), axis=0)).max() < 6.0


def test_velocity_scale_cancels(cap_prtf):
    mesh, grid, sweep, prtf, _ = cap_prtf
    doubled, _ = simulate_prtf_set([mesh, mesh], sweep, grid, center_mm=np.zeros(3), v_n=2.0)
    # normalized by a reference with the same volume velocity
    np.testing.assert_allclose(doubled.values, prtf.values, rtol=1e-9)
    eq1, _ = diffuse_field_equalize(prtf, grid.weights)
    eq2, _ = diffuse_field_equalize(PrtfSet(2.0 * prtf.values, prtf.frequencies), grid.weights)
    np.testing.assert_allclose(log_magnitude(eq2), log_magnitude(eq1), atol=1e-9)


def test_monopole_reference_scales():
    mesh = capped_sphere()
    r1 = monopole_reference(mesh, 10.0, 2.0, 1.0, Medium())
    r2 = monopole_reference(mesh, 10.0, 4.0, 1.0, Medium())
    assert abs(r2) == pytest.approx(abs(r1) / 2)


def test_sweep_band_coverage():
    g = GradingConfig.uniform(10.0)
    with pytest.raises(ValueError):
        FrequencySweep(100.0, 100.0, 5, (Band(100, 200, g), Band(400, 500, g)))
    with pytest.raises(ValueError):
        FrequencySweep(100.0, 100.0, 3, (Band(100, 200, g), Band(200, 300, g)))
    s = FrequencySweep(100.0, 100.0, 160, (
        Band(100, 400, g), Band(500, 2000, g), Band(2100, 3500, g), Band(3600, 16000, g)))
    assert s.frequencies[-1] == 16000.0
    assert np.bincount(s.band_indices()).tolist() == [4, 16, 15, 125]


def test_too_coarse_mesh_fails_frequency():
    mesh = capped_sphere(nu=2)
    grid = icosphere(2, 2.0)
    sweep = toy_sweep()
    prtf, errors = simulate_prtf_set([mesh, mesh], sweep, grid, center_mm=np.zeros(3))
    assert errors
    assert prtf.n_frequencies == 10 - len(errors)


def test_export_bundle(tmp_path):
    mesh = capped_sphere(nu=3)
    path = export_bem_bundle(tmp_path, [mesh, mesh], toy_sweep(), icosphere(2, 2.0), np.zeros(3))
    bundle = json.loads(path.read_text())
    assert len(bundle["bands"]) == 2
    assert len(bundle["field_points"]) == 42
    assert bundle["bands"][0]["frequencies_hz"] == [400.0, 800.0, 1200.0, 1600.0, 2000.0]
    assert (tmp_path / "mesh_band0.ply").exists()
