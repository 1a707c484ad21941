"""Dense collocation boundary element solver for exterior Helmholtz radiation.

Conventions: time dependence exp(-i w t), free-space kernel
G(r) = exp(i k r) / (4 pi r), normals pointing out of the body into the
fluid. Euler's equation then gives dp/dn = i w rho v_n for an outward normal
velocity v_n. Constant elements are collocated at face centroids and the
Kirchhoff-Helmholtz equation

    1/2 p(x) = int_S [p dG/dn_y - G dp/dn] dS_y

is closed with optional CHIEF rows (the same integral equals zero at interior
points), solved in the least-squares sense.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ..mesh.quality import is_watertight
from ..mesh.trimesh import TriMesh
from .quadrature import (
    RULE3_BARY,
    RULE3_WEIGHTS,
    RULE7_BARY,
    RULE7_WEIGHTS,
    quadrature_points,
    solid_angle,
    static_potential,
)

log = logging.getLogger(__name__)

MM = 1e-3
_NEAR_FACTOR = 2.0
_ROW_CHUNK = 256


class BemError(RuntimeError):
    pass


@dataclass(frozen=True)
class Medium:
    speed_of_sound: float = 343.0
    density: float = 1.2


@dataclass
class BemProblem:
    """Exterior radiation problem on a closed mesh given in millimeters.

    ``v_n`` is the outward normal velocity (m/s) on ``source_faces``, either a
    scalar or one value per source face; every other face is rigid.
    ``chief_points`` are interior points in meters.
    """

    mesh: TriMesh
    wavenumber: float
    source_faces: np.ndarray
    v_n: float | np.ndarray = 1.0
    chief_points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    medium: Medium = field(default_factory=Medium)

    def __post_init__(self):
        self.source_faces = np.atleast_1d(np.asarray(self.source_faces, dtype=np.int64))
        self.chief_points = np.asarray(self.chief_points, dtype=float).reshape(-1, 3)
        if self.wavenumber <= 0:
            raise ValueError("wavenumber must be positive")
        if len(self.source_faces) == 0:
            raise ValueError("source patch is empty")
        if self.source_faces.min() < 0 or self.source_faces.max() >= self.mesh.n_faces:
            raise ValueError("source face index out of range")
        if len(np.unique(self.source_faces)) != len(self.source_faces):
            raise ValueError("duplicate source faces")
        v = np.asarray(self.v_n)
        if v.ndim and v.shape != self.source_faces.shape:
            raise ValueError("v_n must be scalar or one value per source face")

    @classmethod
    def from_frequency(cls, mesh: TriMesh, frequency: float, source_faces, v_n=1.0, chief_points=None, medium: Medium | None = None):
        if frequency <= 0:
            raise ValueError("frequency must be positive")
        medium = medium or Medium()
        k = 2.0 * np.pi * frequency / medium.speed_of_sound
        chief = np.empty((0, 3)) if chief_points is None else chief_points
        return cls(mesh, k, source_faces, v_n, chief, medium)

    @property
    def omega(self) -> float:
        return self.wavenumber * self.medium.speed_of_sound

    def neumann_data(self) -> np.ndarray:
        """dp/dn on the source faces (Pa/m)."""
        v = np.broadcast_to(np.asarray(self.v_n, dtype=complex), self.source_faces.shape)
        return 1j * self.omega * self.medium.density * v


@dataclass
class BemSolution:
    pressure: np.ndarray
    residual_norm: float
    condition_estimate: float
    n_chief: int


class _Elements:
    """Geometry of constant elements in meters."""

    def __init__(self, mesh: TriMesh):
        self.tri = mesh.triangles() * MM
        cross = np.cross(self.tri[:, 1] - self.tri[:, 0], self.tri[:, 2] - self.tri[:, 0])
        twice_area = np.linalg.norm(cross, axis=1)
        if np.any(twice_area <= 0):
            raise BemError("mesh has zero-area faces")
        self.normals = cross / twice_area[:, None]
        self.areas = 0.5 * twice_area
        self.centroids = self.tri.mean(axis=1)
        edges = np.roll(self.tri, -1, axis=1) - self.tri
        self.size = np.linalg.norm(edges, axis=2).max(axis=1)
        self.q3 = quadrature_points(self.tri, RULE3_BARY)
        self.w3 = self.areas[:, None] * RULE3_WEIGHTS[None, :]
        self.q7 = quadrature_points(self.tri, RULE7_BARY)
        self.w7 = self.areas[:, None] * RULE7_WEIGHTS[None, :]


def _expm1_over(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z with the removable singularity at 0 filled in."""
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def _far_block(x: np.ndarray, el: _Elements, cols: np.ndarray, k: float, need_h: bool):
    """Regular quadrature for points ``x`` against elements ``cols``."""
    y = el.q3[cols]
    w = el.w3[cols]
    diff = y[None, :, :, :] - x[:, None, None, :]
    r = np.sqrt(np.einsum("mnqj,mnqj->mnq", diff, diff))
    kernel = np.exp(1j * k * r) / (4.0 * np.pi * r)
    g = np.einsum("mnq,nq->mn", kernel, w)
    if not need_h:
        return g, None
    ndot = np.einsum("mnqj,nj->mnq", diff, el.normals[cols])
    dk = kernel * (1j * k * r - 1.0) * ndot / (r * r)
    return g, np.einsum("mnq,nq->mn", dk, w)


def _near_entries(x: np.ndarray, el: _Elements, cols: np.ndarray, k: float, is_self: np.ndarray):
    """Singular/near-singular entries: analytic static part plus 7-point remainder."""
    tri = el.tri[cols]
    g_static = static_potential(x, tri) / (4.0 * np.pi)
    h_static = np.where(is_self, 0.0, solid_angle(x, tri) / (4.0 * np.pi))

    y = el.q7[cols]
    w = el.w7[cols]
    diff = y - x[:, None, :]
    r = np.linalg.norm(diff, axis=2)
    ikr = 1j * k * r
    # (exp(ikr) - 1) / (4 pi r) = ik/(4 pi) * (exp(ikr) - 1)/(ikr)
    g_rem = (1j * k / (4.0 * np.pi)) * _expm1_over(ikr)
    g = g_static + np.einsum("mq,mq->m", g_rem, w)

    ndot = np.einsum("mqj,mj->mq", diff, el.normals[cols])
    with np.errstate(divide="ignore", invalid="ignore"):
        h_rem = (np.exp(ikr) * (ikr - 1.0) + 1.0) * ndot / (4.0 * np.pi * r**3)
    h_rem = np.where(r > 0, h_rem, 0.0)
    h = h_static + np.einsum("mq,mq->m", h_rem, w)
    return g, h


def influence(points: np.ndarray, el: _Elements, k: float, g_cols: np.ndarray, self_index: np.ndarray | None = None):
    """Single-layer (``g_cols`` columns only) and double-layer matrices at ``points``.

    ``self_index[i]`` names the element collocated at point i (or -1).
    Entries whose element lies within two element sizes of the point are
    recomputed with the near-field rule.
    """
    m, n = len(points), len(el.areas)
    H = np.empty((m, n), dtype=complex)
    G = np.empty((m, len(g_cols)), dtype=complex)
    g_pos = -np.ones(n, dtype=np.int64)
    g_pos[g_cols] = np.arange(len(g_cols))
    all_cols = np.arange(n)
    for s in range(0, m, _ROW_CHUNK):
        x = points[s:s + _ROW_CHUNK]
        _, h = _far_block(x, el, all_cols, k, need_h=True)
        g, _ = _far_block(x, el, g_cols, k, need_h=False)
        dist = np.linalg.norm(x[:, None, :] - el.centroids[None, :, :], axis=2)
        near_r, near_c = np.nonzero(dist < _NEAR_FACTOR * el.size[None, :])
        if self_index is not None:
            is_self = self_index[s + near_r] == near_c
        else:
            is_self = np.zeros(len(near_r), dtype=bool)
        gn, hn = _near_entries(x[near_r], el, near_c, k, is_self)
        h[near_r, near_c] = hn
        in_g = g_pos[near_c] >= 0
        g[near_r[in_g], g_pos[near_c[in_g]]] = gn[in_g]
        H[s:s + _ROW_CHUNK] = h
        G[s:s + _ROW_CHUNK] = g
    return G, H


def winding_number(mesh: TriMesh, points_m: np.ndarray) -> np.ndarray:
    """Generalized winding number of a closed, outward mesh (1 inside, 0 outside)."""
    tri = mesh.triangles() * MM
    pts = np.atleast_2d(points_m)
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        out[i] = -solid_angle(np.broadcast_to(p, (len(tri), 3)), tri).sum() / (4.0 * np.pi)
    return out


def default_chief_points(mesh: TriMesh, count: int = 8, seed: int = 0, fraction: float = 0.3) -> np.ndarray:
    """Interior points (meters) drawn uniformly in a ball around the volume centroid.

    The ball radius is ``fraction`` times the distance from the centroid to the
    nearest face centroid; points that fall outside the body are discarded.
    """
    if count == 0:
        return np.empty((0, 3))
    tri = mesh.triangles() * MM
    vol_terms = np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))
    volume = vol_terms.sum() / 6.0
    if volume <= 0:
        raise BemError("mesh must be closed and outward oriented")
    center = (vol_terms[:, None] * tri.sum(axis=1)).sum(axis=0) / (24.0 * volume)
    inradius = np.linalg.norm(tri.mean(axis=1) - center, axis=1).min()
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=(count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = fraction * inradius * rng.random(count) ** (1.0 / 3.0)
    pts = center + direction * radius[:, None]
    inside = winding_number(mesh, pts) > 0.5
    return pts[inside]


def assemble(problem: BemProblem):
    """Return (A, b, elements) for the collocation (+ CHIEF) system A p = b."""
    el = _Elements(problem.mesh)
    k = problem.wavenumber
    n = len(el.areas)
    src = problem.source_faces
    G, H = influence(el.centroids, el, k, src, self_index=np.arange(n))
    A = 0.5 * np.eye(n, dtype=complex) - H
    q = problem.neumann_data()
    b = -(G @ q)
    if len(problem.chief_points):
        Gc, Hc = influence(problem.chief_points, el, k, src)
        A = np.vstack([A, -Hc])
        b = np.concatenate([b, -(Gc @ q)])
    return A, b, el


def assemble_and_solve(problem: BemProblem) -> BemSolution:
    """Surface pressure (Pa) per face."""
    if not is_watertight(problem.mesh):
        raise BemError("mesh is not watertight")
    if problem.mesh.volume() <= 0:
        raise BemError("mesh must be closed and outward oriented")
    A, b, _ = assemble(problem)
    n = A.shape[1]
    if A.shape[0] == n:
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
        p = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
        diag = np.abs(np.diag(lu))
    else:
        Q, R, perm = scipy.linalg.qr(A, mode="economic", pivoting=True, check_finite=False)
        y = scipy.linalg.solve_triangular(R, Q.conj().T @ b, check_finite=False)
        p = np.empty(n, dtype=complex)
        p[perm] = y
        diag = np.abs(np.diag(R))
    cond = float(diag.max() / diag.min()) if diag.min() > 0 else np.inf
    if not np.isfinite(cond) or cond > 1e12:
        raise BemError(f"system is singular or ill-conditioned (estimate {cond:.3g})")
    residual = float(np.linalg.norm(A @ p - b))
    scale = float(np.linalg.norm(A, ord=1))
    log.debug("BEM solve n=%d chief=%d residual=%.3g cond~%.3g", n, len(problem.chief_points), residual, cond)
    return BemSolution(p, residual / scale, cond, len(problem.chief_points))


def evaluate_field(problem: BemProblem, surface_pressure, points: np.ndarray, check_exterior: bool = True) -> np.ndarray:
    """Pressure (Pa) at exterior points given in meters."""
    if isinstance(surface_pressure, BemSolution):
        surface_pressure = surface_pressure.pressure
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if check_exterior:
        wn = winding_number(problem.mesh, pts)
        bad = np.flatnonzero(np.abs(wn) > 1e-3)
        if len(bad):
            raise ValueError(f"{len(bad)} evaluation point(s) inside or on the surface, e.g. index {bad[0]}")
    el = _Elements(problem.mesh)
    G, H = influence(pts, el, problem.wavenumber, problem.source_faces)
    return H @ surface_pressure - G @ problem.neumann_data()
