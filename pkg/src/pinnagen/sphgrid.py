"""Icosahedral geodesic grids and spherical Voronoi quadrature weights.

Directions follow the vertical-polar convention used throughout the package:
x points to the front, y to the left, z up. Azimuth is measured
counter-clockwise from +x in the horizontal plane, elevation from the
horizontal plane towards +z.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

_PHI = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTICES = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=float,
)

_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class SphericalGrid:
    """Measurement directions on a sphere of given radius (meters)."""

    directions: np.ndarray
    radius: float = 1.0
    faces: np.ndarray | None = None
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3:
            raise ValueError("directions must be an (n_d, 3) array")
        if not np.all(np.isfinite(d)):
            raise ValueError("directions must be finite")
        norms = np.linalg.norm(d, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("directions must be unit vectors")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(d),):
                raise ValueError("weights must match the number of directions")
            if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be positive and sum to one")

    @property
    def n_directions(self) -> int:
        return len(self.directions)

    def points(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        """Cartesian microphone positions (meters) around ``center``."""
        return np.asarray(center, dtype=float) + self.radius * self.directions

    def with_weights(self) -> "SphericalGrid":
        return SphericalGrid(self.directions, self.radius, self.faces, voronoi_weights(self))

    def azimuth_elevation(self) -> tuple[np.ndarray, np.ndarray]:
        """Azimuth in [0, 360) and elevation in [-90, 90], degrees."""
        x, y, z = self.directions.T
        az = np.degrees(np.arctan2(y, x)) % 360.0
        el = np.degrees(np.arcsin(np.clip(z, -1.0, 1.0)))
        return az, el


def _project(points: np.ndarray) -> np.ndarray:
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def _split_faces(base: np.ndarray, base_faces: np.ndarray, nu: int) -> tuple[np.ndarray, np.ndarray]:
    """Split every face into nu^2 triangles on its flat barycentric lattice."""
    positions: list[np.ndarray] = list(base)
    edge_ids: dict[tuple[int, int], list[int]] = {}

    def edge_points(a: int, b: int) -> list[int]:
        lo, hi = (a, b) if a < b else (b, a)
        if (lo, hi) not in edge_ids:
            ids = [lo]
            for m in range(1, nu):
                positions.append(base[lo] + (base[hi] - base[lo]) * (m / nu))
                ids.append(len(positions) - 1)
            ids.append(hi)
            edge_ids[(lo, hi)] = ids
        ids = edge_ids[(lo, hi)]
        return ids if a == lo else ids[::-1]

    faces = []
    for a, b, c in base_faces:
        ab = edge_points(a, b)
        ac = edge_points(a, c)
        bc = edge_points(b, c)
        local = {}
        for i in range(nu + 1):
            for j in range(nu + 1 - i):
                if i == 0:
                    gid = ac[j]
                elif j == 0:
                    gid = ab[i]
                elif i + j == nu:
                    gid = bc[j]
                else:
                    positions.append(base[a] + (base[b] - base[a]) * (i / nu) + (base[c] - base[a]) * (j / nu))
                    gid = len(positions) - 1
                local[i, j] = gid
        for i in range(nu):
            for j in range(nu - i):
                faces.append((local[i, j], local[i + 1, j], local[i, j + 1]))
                if i + j < nu - 1:
                    faces.append((local[i + 1, j], local[i + 1, j + 1], local[i, j + 1]))
    return _project(np.array(positions)), np.array(faces, dtype=np.int64)


def icosphere_mesh(frequency: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit geodesic sphere with ``10 f^2 + 2`` vertices and ``20 f^2`` faces.

    ``f = m * 2**k`` with m odd: icosahedron faces are first split m-fold, then
    bisected k times, projecting onto the sphere after every stage. Projecting
    between bisections keeps cells markedly more uniform than one flat f-fold
    split (max/min Voronoi area 1.35 instead of 1.93 at f = 16).
    """
    nu = int(frequency)
    if nu < 1:
        raise ValueError("subdivision frequency must be >= 1")
    odd, halvings = nu, 0
    while odd % 2 == 0:
        odd //= 2
        halvings += 1
    vertices, faces = _split_faces(_project(_ICO_VERTICES), _ICO_FACES, odd)
    for _ in range(halvings):
        vertices, faces = _split_faces(vertices, faces, 2)

    tri = vertices[faces]
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    inward = np.einsum("ij,ij->i", normal, tri.mean(axis=1)) < 0
    faces[inward] = faces[inward][:, ::-1]
    return vertices, faces


def icosphere(subdivision_frequency: int, radius: float = 1.0, weights: bool = True) -> SphericalGrid:
    """Geodesic measurement grid of ``10 f^2 + 2`` directions (radius in meters),
    with Voronoi weights attached unless ``weights`` is false."""
    vertices, faces = icosphere_mesh(subdivision_frequency)
    grid = SphericalGrid(vertices, float(radius), faces)
    return grid.with_weights() if weights else grid


def _signed_spherical_triangle_area(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Signed solid angle of spherical triangles (rows of unit vectors)."""
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(num, den)


def voronoi_weights(grid: SphericalGrid | np.ndarray) -> np.ndarray:
    """Spherical Voronoi cell areas as fractions of the sphere.

    The spherical Delaunay triangulation is the convex hull of the directions;
    each facet's circumcenter is a Voronoi vertex. Inside a facet the cell of a
    corner is the quadrilateral (corner, edge midpoint, circumcenter, edge
    midpoint), summed as two signed spherical triangles so that obtuse facets,
    whose circumcenter falls outside, cancel correctly.
    """
    d = np.asarray(grid.directions if isinstance(grid, SphericalGrid) else grid, dtype=float)
    d = _project(d)
    if len(d) < 4:
        raise ValueError("need at least 4 directions")
    if len(np.unique(np.round(d, 12), axis=0)) != len(d):
        raise ValueError("duplicate directions")
    if np.linalg.matrix_rank(d - d.mean(axis=0), tol=1e-9) < 3:
        raise ValueError("directions are coplanar")
    simplices = ConvexHull(d).simplices.copy()
    tri = d[simplices]
    normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", normal, tri[:, 0]) < 0
    simplices[flip] = simplices[flip][:, ::-1]
    tri = d[simplices]
    normal[flip] *= -1.0
    centers = normal / np.linalg.norm(normal, axis=1, keepdims=True)

    areas = np.zeros(len(d))
    for corner in range(3):
        g = tri[:, corner]
        ahead = _project(g + tri[:, (corner + 1) % 3])
        behind = _project(g + tri[:, (corner + 2) % 3])
        part = _signed_spherical_triangle_area(g, ahead, centers) + _signed_spherical_triangle_area(g, centers, behind)
        areas += np.bincount(simplices[:, corner], weights=part, minlength=len(d))
    total = areas.sum()
    if abs(total / (4.0 * np.pi) - 1.0) > 1e-9 or np.any(areas <= 0):
        raise ValueError("degenerate direction set: Voronoi cells do not tile the sphere")
    return areas / total


def weighted_mean(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Quadrature over directions, which run along the last axis of ``values``."""
    return np.asarray(values) @ np.asarray(weights)


def monte_carlo_cell_fractions(grid: SphericalGrid, n_points: int = 10_000_000, chunk: int = 1_000_000) -> np.ndarray:
    """Nearest-neighbor cell area fractions from a spherical Fibonacci point set.

    The Fibonacci lattice is an equal-area low-discrepancy sequence, so cell
    counts converge far faster than with pseudo-random points.
    """
    from scipy.spatial import cKDTree

    tree = cKDTree(grid.directions)
    counts = np.zeros(grid.n_directions, dtype=np.int64)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    for start in range(0, n_points, chunk):
        i = np.arange(start, min(start + chunk, n_points), dtype=float)
        z = 1.0 - (2.0 * i + 1.0) / n_points
        r = np.sqrt(1.0 - z * z)
        theta = golden * i
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
        _, idx = tree.query(pts)
        counts += np.bincount(idx, minlength=grid.n_directions)
    return counts / n_points


def median_plane_indices(grid: SphericalGrid, tolerance_deg: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Directions within ``tolerance_deg`` of the median (y = 0) plane.

    Returns indices and polar angles in degrees, sorted by polar angle, where
    the polar angle runs 0 (front) -> 90 (above) -> 180 (back) -> 270 (below).
    """
    x, y, z = grid.directions.T
    off_plane = np.degrees(np.arcsin(np.clip(np.abs(y), 0.0, 1.0)))
    idx = np.flatnonzero(off_plane <= tolerance_deg)
    polar = np.degrees(np.arctan2(z[idx], x[idx])) % 360.0
    order = np.argsort(polar, kind="stable")
    return idx[order], polar[order]


def write_grid_csv(grid: SphericalGrid, path: str | Path) -> None:
    """CSV with columns azimuth_deg, elevation_deg, radius_m, weight."""
    weights = grid.weights if grid.weights is not None else voronoi_weights(grid)
    az, el = grid.azimuth_elevation()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["azimuth_deg", "elevation_deg", "radius_m", "weight"])
        for a, e, w in zip(az, el, weights):
            writer.writerow([repr(float(a)), repr(float(e)), repr(float(grid.radius)), repr(float(w))])


def read_grid_csv(path: str | Path) -> SphericalGrid:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    az, el = np.radians(rows[:, 0]), np.radians(rows[:, 1])
    d = np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    d = _project(d)
    w = rows[:, 3] / rows[:, 3].sum()
    return SphericalGrid(d, float(rows[0, 2]), None, w)
