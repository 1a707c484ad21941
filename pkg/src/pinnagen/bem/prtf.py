"""Transfer-function simulation by reciprocity.

The source sits on the canal plug (faces labeled as source); virtual
microphones lie on a spherical grid. Each frequency uses the mesh graded for
its band. Field pressures are divided by the pressure the same source
strength would radiate as a point monopole in free field at the grid radius,
which makes the result dimensionless and independent of the source velocity.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..mesh.quality import elements_per_wavelength
from ..mesh.remesh import GradingConfig
from ..mesh.trimesh import LABEL_SOURCE, TriMesh, write_ply
from ..post import PrtfSet
from ..sphgrid import SphericalGrid
from .solver import MM, BemError, BemProblem, Medium, assemble_and_solve, default_chief_points, evaluate_field

log = logging.getLogger(__name__)

MIN_ELEMENTS_PER_WAVELENGTH = 5.0


@dataclass(frozen=True)
class Band:
    f_low: float
    f_high: float
    grading: GradingConfig

    def contains(self, f: float) -> bool:
        return self.f_low - 1e-9 <= f <= self.f_high + 1e-9


@dataclass(frozen=True)
class FrequencySweep:
    f_start: float = 100.0
    f_step: float = 100.0
    n_f: int = 160
    bands: tuple[Band, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.f_start <= 0 or self.f_step <= 0 or self.n_f < 1:
            raise ValueError("sweep needs positive start, step and count")
        if self.bands:
            self.band_indices()

    @property
    def frequencies(self) -> np.ndarray:
        return self.f_start + self.f_step * np.arange(self.n_f)

    def band_indices(self) -> np.ndarray:
        """Band index of every sweep frequency; each must fall in exactly one band."""
        out = np.empty(self.n_f, dtype=np.int64)
        for i, f in enumerate(self.frequencies):
            hits = [b for b, band in enumerate(self.bands) if band.contains(f)]
            if len(hits) != 1:
                what = "no band" if not hits else f"{len(hits)} bands"
                raise ValueError(f"frequency {f:g} Hz is covered by {what}")
            out[i] = hits[0]
        return out


def source_faces(mesh: TriMesh) -> np.ndarray:
    faces = np.flatnonzero(mesh.labels == LABEL_SOURCE)
    if len(faces) == 0:
        raise BemError("mesh has no source-labeled faces")
    return faces


def source_centroid(mesh: TriMesh) -> np.ndarray:
    """Area-weighted centroid of the source patch (mm)."""
    idx = source_faces(mesh)
    a = mesh.face_areas()[idx]
    return (mesh.centroids()[idx] * a[:, None]).sum(axis=0) / a.sum()


def monopole_reference(mesh: TriMesh, k: float, distance_m: float, v_n: float, medium: Medium) -> complex:
    """Free-field pressure of a point source with the patch's volume velocity."""
    idx = source_faces(mesh)
    q = v_n * mesh.face_areas()[idx].sum() * MM * MM
    omega = k * medium.speed_of_sound
    return -1j * omega * medium.density * q * np.exp(1j * k * distance_m) / (4.0 * np.pi * distance_m)


@dataclass
class FrequencyResult:
    frequency: float
    values: np.ndarray
    residual: float
    condition: float
    n_faces: int


def simulate_frequency(
    mesh: TriMesh,
    frequency: float,
    grid: SphericalGrid,
    center_mm: np.ndarray,
    v_n: float = 1.0,
    medium: Medium | None = None,
    n_chief: int = 8,
    chief_seed: int = 0,
    min_epw: float = MIN_ELEMENTS_PER_WAVELENGTH,
) -> FrequencyResult:
    medium = medium or Medium()
    epw = elements_per_wavelength(mesh, frequency, medium.speed_of_sound)
    if epw < min_epw:
        raise BemError(f"{epw:.2f} elements per wavelength at {frequency:g} Hz (need {min_epw})")
    src = source_faces(mesh)
    chief = default_chief_points(mesh, n_chief, chief_seed)
    problem = BemProblem.from_frequency(mesh, frequency, src, v_n, chief, medium)
    sol = assemble_and_solve(problem)
    points = grid.points(np.asarray(center_mm, dtype=float) * MM)
    field_p = evaluate_field(problem, sol, points, check_exterior=False)
    ref = monopole_reference(mesh, problem.wavenumber, grid.radius, v_n, medium)
    return FrequencyResult(float(frequency), field_p / ref, sol.residual_norm, sol.condition_estimate, mesh.n_faces)


def simulate_prtf_set(
    band_meshes: list[TriMesh],
    sweep: FrequencySweep,
    grid: SphericalGrid,
    center_mm=None,
    v_n: float = 1.0,
    medium: Medium | None = None,
    n_chief: int = 8,
) -> tuple[PrtfSet, list[str]]:
    """Simulate every sweep frequency; failures leave NaN rows and a message.

    Returns the set of successful rows (marked partial in ``meta`` when any
    frequency failed) and the list of failure messages.
    """
    if len(band_meshes) != len(sweep.bands):
        raise ValueError("one mesh per band required")
    which = sweep.band_indices()
    if center_mm is None:
        center_mm = source_centroid(band_meshes[0])
    rows, freqs, errors = [], [], []
    for f, b in zip(sweep.frequencies, which):
        try:
            res = simulate_frequency(band_meshes[b], f, grid, center_mm, v_n, medium, n_chief)
        except BemError as exc:
            errors.append(f"{f:g} Hz: {exc}")
            continue
        rows.append(res.values)
        freqs.append(f)
    values = np.array(rows).reshape(len(rows), grid.n_directions)
    prtf = PrtfSet(values, np.array(freqs), meta={"partial": bool(errors)})
    return prtf, errors


def export_bem_bundle(
    directory: str | Path,
    band_meshes: list[TriMesh],
    sweep: FrequencySweep,
    grid: SphericalGrid,
    center_mm,
    v_n: float = 1.0,
    medium: Medium | None = None,
) -> Path:
    """Write meshes (PLY, mm) and a JSON description of the boundary conditions
    for use with an external solver."""
    medium = medium or Medium()
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    bands = []
    which = sweep.band_indices()
    for b, (mesh, band) in enumerate(zip(band_meshes, sweep.bands)):
        name = f"mesh_band{b}.ply"
        write_ply(mesh, d / name)
        bands.append(
            {
                "mesh": name,
                "f_low_hz": band.f_low,
                "f_high_hz": band.f_high,
                "frequencies_hz": [float(f) for f in sweep.frequencies[which == b]],
                "source_faces": [int(i) for i in source_faces(mesh)],
            }
        )
    points = grid.points(np.asarray(center_mm, dtype=float) * MM)
    bundle = {
        "units": {"mesh": "mm", "field_points": "m"},
        "time_convention": "exp(-i omega t)",
        "boundary_conditions": {
            "source": {"type": "normal_velocity", "value_m_per_s": v_n, "face_label": LABEL_SOURCE},
            "elsewhere": "rigid (zero normal velocity)",
        },
        "medium": {"speed_of_sound": medium.speed_of_sound, "density": medium.density},
        "normalization": "field pressure / free-field monopole of equal volume velocity at the grid radius",
        "bands": bands,
        "field_points": [[float(x) for x in p] for p in points],
    }
    path = d / "bem_bundle.json"
    path.write_text(json.dumps(bundle, indent=2) + "\n")
    return path
