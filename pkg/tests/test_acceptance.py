"""Acceptance gate: ten numbered criteria, each reported as one PASS/FAIL line
in the terminal summary (``pytest tests/test_acceptance.py``).

Measured quantities are attached with ``record_property("measured", ...)`` so
the summary line shows how close each check came to its tolerance.
"""

import time

import numpy as np
import pytest
import scipy.stats as sps
from conftest import sphere_mesh

from pinnagen.bem import BemProblem, assemble_and_solve, default_chief_points, evaluate_field, pulsating_sphere, vibrating_cap
from pinnagen.bem.solver import MM
from pinnagen.mesh import self_intersections
from pinnagen.mesh.intersect import self_intersections_brute_force
from pinnagen.mesh.quality import elements_per_wavelength
from pinnagen.pipeline.archive import Manifest, UnitLedger, read_complex
from pinnagen.post import anticausal_energy_ratio, log_magnitude, min_phase
from pinnagen.shape_model import cpv_curve, fit_pca, project, reconstruct
from pinnagen.sphgrid import icosphere, icosphere_mesh, monte_carlo_cell_fractions, read_grid_csv
from pinnagen.stats import royston_test, shapiro_wilk

A = 0.05  # sphere radius, m
C = 343.0


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def db_err(x, ref):
    return np.abs(20 * np.log10(np.abs(x) / np.abs(ref)))


def phase_err(x, ref):
    return np.abs(np.degrees(np.angle(x / ref)))


def solve_sphere(nu, k, v_n=1.0, source=None, chief=8):
    mesh = sphere_mesh(A / MM, nu)
    faces = np.arange(mesh.n_faces) if source is None else source
    problem = BemProblem(mesh, k, faces, v_n, default_chief_points(mesh, chief))
    return mesh, problem, assemble_and_solve(problem)


# ----------------------------------------------------------------------------


@criterion(1, "BEM vs pulsating sphere, ka in {0.5, 1, 2, 5}: 0.5 dB / 3 deg on surface and 2 m field, < 5 min")
def test_criterion_01_pulsating_sphere(record_property):
    t0 = time.perf_counter()
    field_pts = icosphere(4, 2.0).points()
    worst_db, worst_deg, min_epw = 0.0, 0.0, np.inf
    for ka in (0.5, 1.0, 2.0, 5.0):
        k = ka / A
        mesh, problem, sol = solve_sphere(8, k)
        min_epw = min(min_epw, elements_per_wavelength(mesh, k * C / (2 * np.pi), C))
        surf_ref = pulsating_sphere(A, k, A)
        field = evaluate_field(problem, sol, field_pts)
        field_ref = pulsating_sphere(A, k, 2.0)
        worst_db = max(worst_db, db_err(sol.pressure, surf_ref).max(), db_err(field, field_ref).max())
        worst_deg = max(worst_deg, phase_err(sol.pressure, surf_ref).max(), phase_err(field, field_ref).max())
    elapsed = time.perf_counter() - t0
    record_property("measured", f"max {worst_db:.3f} dB, {worst_deg:.2f} deg, {min_epw:.1f} el/wavelength, {elapsed:.0f} s")
    assert min_epw >= 6
    assert worst_db <= 0.5
    assert worst_deg <= 3.0
    assert elapsed < 300


def cap_velocity_fraction(mesh, half_angle, levels=30):
    """Fraction of each face (by barycentric sampling) lying inside the cap."""
    i, j = np.meshgrid(np.arange(levels + 1), np.arange(levels + 1), indexing="ij")
    keep = i + j <= levels
    bary = np.column_stack([i[keep], j[keep], levels - i[keep] - j[keep]]) / levels
    tri = mesh.triangles()
    pts = np.einsum("sk,fkd->fsd", bary, tri)
    cos = pts[..., 2] / np.linalg.norm(pts, axis=-1)
    return np.mean(cos > np.cos(half_angle), axis=1)


@criterion(2, "BEM vs vibrating cap (30 deg, ka=2): all 162 grid directions within 1 dB")
def test_criterion_02_vibrating_cap(record_property):
    half = np.radians(30.0)
    k = 2.0 / A
    mesh = sphere_mesh(A / MM, 8)
    frac = cap_velocity_fraction(mesh, half)
    source = np.flatnonzero(frac > 0)
    problem = BemProblem(mesh, k, source, frac[source], default_chief_points(mesh, 8))
    sol = assemble_and_solve(problem)
    grid = icosphere(4, 2.0)
    assert grid.n_directions == 162
    field = evaluate_field(problem, sol, grid.points())
    ref, tail = vibrating_cap(A, k, half, 2.0, grid.directions[:, 2], n_terms=60)
    assert np.abs(tail).max() < 1e-12 * np.abs(ref).max()
    err = db_err(field, ref)
    record_property("measured", f"max {err.max():.3f} dB over {len(err)} directions")
    assert err.max() <= 1.0


@criterion(3, "BEM convergence over three refinements: monotone error, empirical order >= 1")
def test_criterion_03_convergence(record_property):
    k = 1.0 / A
    exact = pulsating_sphere(A, k, A)
    h, err = [], []
    for nu in (2, 4, 8):
        mesh, _, sol = solve_sphere(nu, k, chief=0)
        w = mesh.face_areas()
        # area-weighted relative L2 error of the surface pressure
        err.append(np.sqrt(np.sum(w * np.abs(sol.pressure - exact) ** 2) / np.sum(w * np.abs(exact) ** 2)))
        h.append(mesh.edge_lengths().max())
    h, err = np.array(h), np.array(err)
    order = np.polyfit(np.log(h), np.log(err), 1)[0]
    steps = np.log(err[:-1] / err[1:]) / np.log(h[:-1] / h[1:])
    record_property("measured", f"errors {', '.join(f'{e:.2e}' for e in err)}; order {order:.2f} (steps {steps[0]:.2f}, {steps[1]:.2f})")
    assert np.all(np.diff(err) < 0)
    assert order >= 1.0


@criterion(4, "PCA: orthonormal basis, exact round trip, Gram == direct on 20 datasets, CPV ends at 100")
def test_criterion_04_pca(record_property):
    r = np.random.default_rng(404)
    worst_orth = worst_trip = worst_eig = worst_vec = 0.0
    for _ in range(20):
        n = int(r.integers(4, 16))
        n_v = int(r.integers(n, 40))
        x = r.normal(size=(n, 3 * n_v)) * r.uniform(0.5, 5.0, 3 * n_v) + r.normal(size=3 * n_v) * 10
        m = fit_pca(x)
        b = m.basis
        worst_orth = max(worst_orth, np.abs(b @ b.T - np.eye(len(b))).max())
        back = reconstruct(m, project(m, x))
        worst_trip = max(worst_trip, np.abs(back - x).max())

        xc = x - x.mean(axis=0)
        direct_val, direct_vec = np.linalg.eigh(xc.T @ xc / (n - 1))
        direct_val, direct_vec = direct_val[::-1][: n - 1], direct_vec[:, ::-1][:, : n - 1]
        gram_val = np.linalg.eigvalsh(xc @ xc.T / (n - 1))[::-1][: n - 1]
        scale = direct_val[0]
        worst_eig = max(worst_eig, np.abs(m.sigmas ** 2 - direct_val).max() / scale,
                        np.abs(gram_val - direct_val).max() / scale)
        worst_vec = max(worst_vec, np.abs(np.abs(np.sum(b * direct_vec.T, axis=1)) - 1).max())

        curve = cpv_curve(m)
        assert np.all(np.diff(curve) >= 0)
        assert curve[-1] == 100.0
    record_property("measured", f"orth {worst_orth:.1e}, round trip {worst_trip:.1e} mm, "
                                f"eigenvalues {worst_eig:.1e}, vectors {worst_vec:.1e}")
    assert worst_orth <= 1e-8
    assert worst_trip <= 1e-6
    assert worst_eig <= 1e-8
    assert worst_vec <= 1e-8


def rational_log_magnitude(r, n_bins=161):
    """Random pole-zero spectrum whose singularities stay off the unit circle
    (radius <= 0.85 or >= 1/0.85), so its cepstrum fits the 2 (n_bins - 1) grid."""
    z1 = np.exp(-1j * np.pi * np.arange(n_bins) / (n_bins - 1))
    h = np.ones(n_bins, dtype=complex)
    radii = np.where(r.random(3) < 0.5, r.uniform(0.1, 0.85, 3), r.uniform(1 / 0.85, 3.0, 3))
    for z in radii * np.exp(1j * r.uniform(0, np.pi, 3)):
        h *= (1 - z * z1) * (1 - np.conj(z) * z1)
    for p in r.uniform(0.1, 0.85, 2) * np.exp(1j * r.uniform(0, np.pi, 2)):
        h /= (1 - p * z1) * (1 - np.conj(p) * z1)
    return 20 * np.log10(np.abs(h))


@criterion(5, "Minimum phase: magnitude kept to 1e-6 dB, anticausal energy <= 1e-10, |1-2z^-1| -> 2-z^-1")
def test_criterion_05_min_phase(toy_run, record_property):
    r = np.random.default_rng(505)
    worst_mag = worst_anti = 0.0
    for _ in range(200):
        mag = rational_log_magnitude(r)
        h = min_phase(mag)
        worst_mag = max(worst_mag, np.abs(20 * np.log10(np.abs(h)) - mag).max())
        worst_anti = max(worst_anti, anticausal_energy_ratio(h))
    z1 = np.exp(-1j * np.pi * np.arange(161) / 160)
    h = min_phase(20 * np.log10(np.abs(1 - 2 * z1)))
    reflect = np.abs(h - (2 - z1)).max()
    # the toy CTFs live on 11 bins, too short a grid to hold their impulse
    # response; reported for reference, not held to the tolerance
    root = toy_run[0].root
    toy = max(anticausal_energy_ratio(np.fromfile(p, "<f8") + 1j * np.fromfile(p.with_name("ctf_im.f8"), "<f8"))
              for p in (root / "subjects").glob("*/ctf_re.f8"))
    record_property("measured", f"magnitude {worst_mag:.1e} dB, anticausal {worst_anti:.1e}, reflection {reflect:.1e}; "
                                f"toy CTFs (11 bins, not asserted) {toy:.1e}")
    assert worst_mag <= 1e-6
    assert worst_anti <= 1e-10
    assert reflect <= 1e-6


@criterion(6, "Diffuse-field property on the toy run: weighted mean log-magnitude 0 +- 1e-6 dB")
def test_criterion_06_diffuse_field(toy_run, record_property):
    root = toy_run[0].root
    manifest = Manifest.load(root)
    grid = read_grid_csv(root / "grid.csv")
    n_rows = len(manifest.data["frequencies_hz"]) + 1
    worst, n_sets = 0.0, 0
    for sid, subj in manifest.data["subjects"].items():
        if subj["status"] != "complete":
            continue
        eq = read_complex(root / "subjects" / sid / "prtf_eq", (n_rows, grid.n_directions))
        worst = max(worst, np.abs(log_magnitude(eq) @ grid.weights).max())
        n_sets += 1
    record_property("measured", f"max |mean| {worst:.1e} dB over {n_sets} sets x {n_rows} frequencies")
    assert n_sets > 0
    assert worst <= 1e-6


@criterion(7, "Self-intersection BVH equals brute force on 100 random 500-triangle soups")
def test_criterion_07_bvh(record_property):
    r = np.random.default_rng(707)
    total = 0
    for _ in range(100):
        size = r.uniform(0.05, 0.3)
        centers = r.random((500, 3))
        v = (centers[:, None, :] + size * (r.random((500, 3, 3)) - 0.5)).reshape(-1, 3)
        f = np.arange(1500).reshape(500, 3)
        fast = self_intersections(v, f)
        assert fast == self_intersections_brute_force(v, f)
        total += len(fast)
    record_property("measured", f"{total} intersecting pairs, all matched")
    assert total > 0


@criterion(8, "Icosphere counts for nu in {1,2,4,8,16}; weights sum to 1 +- 1e-12; Monte Carlo cells within 1% at nu=16")
def test_criterion_08_sphere_grid(record_property):
    for nu in (1, 2, 4, 8, 16):
        v, f = icosphere_mesh(nu)
        assert len(v) == 10 * nu * nu + 2
        assert len(f) == 20 * nu * nu
        g = icosphere(nu)
        assert abs(g.weights.sum() - 1.0) <= 1e-12
    g = icosphere(16)
    mc = monte_carlo_cell_fractions(g, n_points=10_000_000)
    rel = np.abs(mc / g.weights - 1).max()
    record_property("measured", f"max cell deviation {100 * rel:.2f}% with 1e7 points")
    assert rel <= 0.01


@criterion(9, "Shapiro-Wilk and Royston size 5% +- 2% over 2000 trials; power >= 99% vs log-normal (n=200, dim=3)")
def test_criterion_09_calibration(record_property):
    r = np.random.default_rng(909)
    trials = 2000
    sw = {n: np.mean([shapiro_wilk(r.normal(size=n))[1] < 0.05 for _ in range(trials)]) for n in (20, 200)}
    roy = {d: np.mean([royston_test(r.normal(size=(200, d))).p_value < 0.05 for _ in range(trials)]) for d in (2, 3)}
    power = np.mean([royston_test(np.exp(r.normal(size=(200, 3)))).p_value < 0.05 for _ in range(trials)])
    # scipy's implementation of the same algorithm as an independent cross-check
    x = r.normal(size=200)
    assert shapiro_wilk(x)[1] == pytest.approx(sps.shapiro(x).pvalue, abs=1e-4)
    record_property("measured", "SW size " + ", ".join(f"n={n}: {100 * v:.1f}%" for n, v in sw.items())
                    + "; Royston size " + ", ".join(f"d={d}: {100 * v:.1f}%" for d, v in roy.items())
                    + f"; power {100 * power:.1f}%")
    for rate in (*sw.values(), *roy.values()):
        assert abs(rate - 0.05) <= 0.02
    assert power >= 0.99


@criterion(10, "Toy pipeline: < 10 min, deterministic over two runs, resumable with byte-identical units")
def test_criterion_10_toy_pipeline(toy_run, toy_run_repeat, toy_run_interrupted, toy_config, record_property):
    result, seconds = toy_run
    cfg = toy_config
    assert cfg.raw["dataset"]["n_subjects"] == 12 and cfg.count == 5
    assert cfg.raw["grid"]["subdivision_frequency"] == 4
    assert cfg.sweep.n_f == 10 and cfg.sweep.frequencies.max() <= 4000
    assert result.n_complete == result.n_kept

    def subject_bytes(root):
        return {str(p.relative_to(root)): p.read_bytes() for p in sorted((root / "subjects").rglob("*")) if p.is_file()}

    first = subject_bytes(result.root)
    second = subject_bytes(toy_run_repeat.root)
    same_manifest = (result.root / "manifest.json").read_bytes() == (toy_run_repeat.root / "manifest.json").read_bytes()

    out, snapshot, resumed = toy_run_interrupted
    after = subject_bytes(out)
    units_before = [k for k in snapshot if "/units/" in k]
    kept_units = all(after[k] == snapshot[k] for k in units_before)
    ledger = UnitLedger(out / "units.jsonl")
    record_property("measured", f"{seconds:.0f} s; {len(first)} files identical across runs: {first == second}; "
                                f"{len(units_before)} units survived the kill unchanged: {kept_units}; "
                                f"{resumed.n_units_computed} recomputed")
    assert seconds < 600
    assert same_manifest and first == second
    assert units_before and kept_units
    assert after == first
    assert len(ledger.done) == 10 * result.n_kept
