"""Mesh construction from point clouds and closing of open ear meshes.

An open ear mesh has two boundary loops: the ear-canal opening and the outer
rim. The canal is plugged with a fan around the loop centroid (those faces
become the acoustic source patch) and the rim is zipped onto the top ring of
a generated cylinder whose far end is capped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..shape_model import FaceTopology, vertices_from_flat
from .intersect import self_intersections
from .quality import is_manifold, is_watertight
from .trimesh import LABEL_BASE, LABEL_SOURCE, LABEL_SURFACE, TriMesh, boundary_loops, orient_consistently


class ClosingError(RuntimeError):
    pass


@dataclass(frozen=True)
class CylinderBase:
    """Open cylinder below the outer rim, capped at its far end; ``height`` 0
    closes the rim with a flat disk instead."""

    radius: float = 60.0
    height: float = 30.0
    segments: int = 64

    def __post_init__(self):
        if self.radius <= 0 or self.height < 0 or self.segments < 3:
            raise ValueError("cylinder needs radius > 0, height >= 0, segments >= 3")


def build_mesh(cloud: np.ndarray, topology: FaceTopology) -> TriMesh:
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 1 or len(cloud) % 3:
        raise ValueError("cloud must be a flat vector of length 3 n_v")
    vertices = vertices_from_flat(cloud)
    topology.check_vertex_count(len(vertices))
    return TriMesh(vertices, topology.faces.copy())


def _check_loop(mesh: TriMesh, loop) -> list[int]:
    loop = [int(v) for v in loop]
    if len(loop) < 3 or len(set(loop)) != len(loop):
        raise ClosingError("boundary loop must list at least 3 distinct vertices")
    known = {tuple(lp) for lp in _rotations(boundary_loops(mesh.faces))}
    if tuple(loop) not in known and tuple(loop[::-1]) not in known:
        raise ClosingError("loop is not a simple boundary cycle of the mesh")
    return loop


def _rotations(loops):
    for lp in loops:
        for s in range(len(lp)):
            yield lp[s:] + lp[:s]


def _fan(vertices: list[np.ndarray], loop: list[int]) -> tuple[int, list[list[int]]]:
    center = len(vertices)
    pts = np.array([vertices[v] for v in loop])
    vertices.append(pts.mean(axis=0))
    faces = [[loop[(i + 1) % len(loop)], loop[i], center] for i in range(len(loop))]
    return center, faces


def _plane_frame(points: np.ndarray, away_from: np.ndarray):
    """Centroid, unit normal pointing away from ``away_from``, in-plane axes."""
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c)
    n = vt[2]
    if np.dot(away_from - c, n) > 0:
        n = -n
    e1 = vt[0] - np.dot(vt[0], n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return c, n, e1, e2


def _zip_parameters(pts: np.ndarray, c: np.ndarray, e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    """Monotone parameter in [0, 1) along the loop: polar angle when the loop
    is star-shaped around its centroid, normalized arc length otherwise."""
    rel = pts - c
    ang = np.arctan2(rel @ e2, rel @ e1)
    unwrapped = np.unwrap(ang)
    step = np.diff(np.concatenate([unwrapped, [unwrapped[0] + np.sign(unwrapped[-1] - unwrapped[0]) * 2 * np.pi]]))
    if np.all(step > 0) or np.all(step < 0):
        t = (unwrapped - unwrapped[0]) / (2 * np.pi)
        return np.abs(t)
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)[:-1]]) / seg.sum()


def _stitch_base(vertices: list[np.ndarray], loop: list[int], base: CylinderBase, body_center: np.ndarray):
    pts = np.array([vertices[v] for v in loop])
    c, n, e1, e2 = _plane_frame(pts, body_center)
    rel = pts - c
    radial = np.linalg.norm(rel - np.outer(rel @ n, n), axis=1)
    if radial.max() >= base.radius:
        raise ClosingError(f"outer loop extends to {radial.max():.2f} mm, beyond the base radius {base.radius} mm")
    if base.height == 0:
        # a flat base is just a disk over the rim loop
        _, cap = _fan(vertices, loop)
        return cap

    # Orient the rim so its angular direction matches the loop's.
    ang = np.unwrap(np.arctan2(rel @ e2, rel @ e1))
    direction = 1.0 if ang[-1] >= ang[0] else -1.0
    if abs(ang[-1] - ang[0]) < 1e-12:
        direction = 1.0
    start = np.arctan2(rel[0] @ e2, rel[0] @ e1)
    m = base.segments
    theta = start + direction * 2 * np.pi * np.arange(m) / m
    top = [len(vertices) + i for i in range(m)]
    for th in theta:
        vertices.append(c + base.radius * (np.cos(th) * e1 + np.sin(th) * e2))

    faces: list[list[int]] = []
    t_loop = _zip_parameters(pts, c, e1, e2)
    t_rim = np.arange(m) / m
    i = j = 0
    nl = len(loop)
    while i < nl or j < m:
        a, b = loop[i % nl], top[j % m]
        next_loop = t_loop[i + 1] if i + 1 < nl else 1.0 + t_loop[0]
        next_rim = t_rim[j + 1] if j + 1 < m else 1.0
        if j >= m or (i < nl and next_loop <= next_rim):
            faces.append([a, loop[(i + 1) % nl], b])
            i += 1
        else:
            faces.append([a, top[(j + 1) % m], b])
            j += 1

    bottom = [len(vertices) + i for i in range(m)]
    for th in theta:
        vertices.append(c + base.radius * (np.cos(th) * e1 + np.sin(th) * e2) + base.height * n)
    for k in range(m):
        k1 = (k + 1) % m
        faces.append([top[k], top[k1], bottom[k1]])
        faces.append([top[k], bottom[k1], bottom[k]])
    _, cap = _fan(vertices, bottom)
    faces += cap
    return faces


def close_mesh(
    mesh: TriMesh,
    loops,
    base: CylinderBase | None = None,
    source_loop: int | None = 0,
    check_intersections: bool = True,
) -> TriMesh:
    """Close the listed boundary loops.

    With a ``base``, the last loop is stitched onto it and every other loop is
    fan-capped; without one, every loop is fan-capped. The cap of
    ``loops[source_loop]`` is labeled as the source patch. Faces are then
    oriented outward; any self-intersection makes the operation fail.
    """
    loops = [_check_loop(mesh, lp) for lp in loops]
    if not loops:
        if not is_watertight(mesh):
            raise ClosingError("mesh is open but no loops were given")
        return mesh
    vertices = list(mesh.vertices)
    body_center = mesh.vertices[np.unique(mesh.faces)].mean(axis=0)
    new_faces: list[list[int]] = []
    new_labels: list[int] = []
    fan_loops = loops[:-1] if base is not None else loops
    for idx, loop in enumerate(fan_loops):
        _, faces = _fan(vertices, loop)
        label = LABEL_SOURCE if idx == source_loop else LABEL_SURFACE
        new_faces += faces
        new_labels += [label] * len(faces)
    if base is not None:
        faces = _stitch_base(vertices, loops[-1], base, body_center)
        new_faces += faces
        new_labels += [LABEL_BASE] * len(faces)

    closed = TriMesh(
        np.array(vertices),
        np.vstack([mesh.faces, np.array(new_faces, dtype=np.int64).reshape(-1, 3)]),
        np.concatenate([mesh.labels, np.array(new_labels, dtype=np.int64)]),
    )
    if not (is_watertight(closed) and is_manifold(closed)):
        raise ClosingError("closing did not produce a watertight manifold")
    closed = orient_consistently(closed)
    if check_intersections:
        hits = self_intersections(closed)
        if hits:
            raise ClosingError(f"closed mesh self-intersects ({len(hits)} face pairs, e.g. {hits[0]})")
    return closed
