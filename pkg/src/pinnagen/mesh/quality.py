"""Simulation-readiness checks."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .intersect import self_intersections
from .trimesh import TriMesh

DEGENERATE_AREA = 1e-6  # mm^2


@dataclass
class MeshReport:
    is_manifold: bool
    is_watertight: bool
    n_self_intersections: int
    min_angle: float
    edge_length_min: float
    edge_length_mean: float
    edge_length_max: float
    n_degenerate: int
    n_faces: int
    n_vertices: int
    euler_characteristic: int

    @property
    def simulation_ready(self) -> bool:
        return self.is_manifold and self.is_watertight and self.n_self_intersections == 0 and self.n_degenerate == 0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["simulation_ready"] = self.simulation_ready
        return d


def _edge_counts(faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    return np.unique(e, axis=0, return_counts=True)


def _vertex_manifold(mesh: TriMesh) -> bool:
    """Every vertex's incident faces form a single fan."""
    incident: dict[int, list[int]] = {}
    for fi, f in enumerate(mesh.faces):
        for v in f:
            incident.setdefault(int(v), []).append(fi)
    for v, fs in incident.items():
        # union-find over faces sharing an edge through v
        parent = {f: f for f in fs}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        by_other: dict[int, list[int]] = {}
        for f in fs:
            for u in mesh.faces[f]:
                if u != v:
                    by_other.setdefault(int(u), []).append(f)
        for group in by_other.values():
            for f in group[1:]:
                parent[find(f)] = find(group[0])
        if len({find(f) for f in fs}) > 1:
            return False
    return True


def is_manifold(mesh: TriMesh) -> bool:
    if mesh.n_faces == 0:
        return True
    _, counts = _edge_counts(mesh.faces)
    return bool(counts.max() <= 2) and _vertex_manifold(mesh)


def is_watertight(mesh: TriMesh) -> bool:
    if mesh.n_faces == 0:
        return False
    _, counts = _edge_counts(mesh.faces)
    return bool(np.all(counts == 2))


def min_angles(mesh: TriMesh) -> np.ndarray:
    t = mesh.triangles()
    out = np.full(len(t), 180.0)
    for k in range(3):
        a = t[:, (k + 1) % 3] - t[:, k]
        b = t[:, (k + 2) % 3] - t[:, k]
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.einsum("ij,ij->i", a, b) / (na * nb)
        ang = np.degrees(np.arccos(np.clip(np.nan_to_num(cos, nan=1.0), -1.0, 1.0)))
        out = np.minimum(out, ang)
    return out


def check_mesh(mesh: TriMesh, intersections: bool = True) -> MeshReport:
    lengths = mesh.edge_lengths() if mesh.n_faces else np.zeros(1)
    n_si = len(self_intersections(mesh)) if intersections and mesh.n_faces else 0
    return MeshReport(
        is_manifold=is_manifold(mesh),
        is_watertight=is_watertight(mesh),
        n_self_intersections=n_si,
        min_angle=float(min_angles(mesh).min()) if mesh.n_faces else 0.0,
        edge_length_min=float(lengths.min()),
        edge_length_mean=float(lengths.mean()),
        edge_length_max=float(lengths.max()),
        n_degenerate=int(np.sum(mesh.face_areas() < DEGENERATE_AREA)),
        n_faces=mesh.n_faces,
        n_vertices=int(len(np.unique(mesh.faces))) if mesh.n_faces else 0,
        euler_characteristic=mesh.euler_characteristic() if mesh.n_faces else 0,
    )


def elements_per_wavelength(mesh: TriMesh, frequency: float, speed_of_sound: float = 343.0) -> float:
    """Acoustic wavelength over the longest edge (both in mm)."""
    if frequency <= 0:
        raise ValueError("frequency must be positive")
    wavelength_mm = speed_of_sound / frequency * 1e3
    return float(wavelength_mm / mesh.edge_lengths().max())
