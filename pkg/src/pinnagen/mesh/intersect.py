"""Triangle-triangle intersection and mesh self-intersection detection.

The pair predicate is a separating-axis test over the coordinate axes, both
face normals, the nine edge-edge cross products and the six in-plane edge
normals. That axis set is complete for coplanar and non-coplanar pairs, so a
pair is reported iff no axis separates the two closed triangles by more than
``eps``. Because the coordinate axes belong to the predicate, the bounding-box
pruning of the BVH can never discard a pair the predicate would accept, and
BVH queries match the brute-force enumeration exactly.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-9
_LEAF_SIZE = 8


def _interval(tri: np.ndarray, axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    proj = np.einsum("nkj,nj->nk", tri, axis)
    return proj.min(axis=1), proj.max(axis=1)


def triangles_intersect(t1: np.ndarray, t2: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Vectorized closed-triangle intersection test.

    ``t1`` and ``t2`` are ``(m, 3, 3)`` arrays; returns a boolean array of
    length m. Touching triangles (gap <= eps) count as intersecting.
    """
    t1 = np.asarray(t1, dtype=float).reshape(-1, 3, 3)
    t2 = np.asarray(t2, dtype=float).reshape(-1, 3, 3)
    m = len(t1)
    separated = np.zeros(m, dtype=bool)
    if m == 0:
        return ~separated

    lo1, hi1 = t1.min(axis=1), t1.max(axis=1)
    lo2, hi2 = t2.min(axis=1), t2.max(axis=1)
    separated |= np.any((lo2 - hi1 > eps) | (lo1 - hi2 > eps), axis=1)
    live = np.flatnonzero(~separated)
    if len(live) == 0:
        return ~separated
    a, b = t1[live], t2[live]

    e1 = np.roll(a, -1, axis=1) - a
    e2 = np.roll(b, -1, axis=1) - b
    n1 = np.cross(e1[:, 0], e1[:, 1])
    n2 = np.cross(e2[:, 0], e2[:, 1])
    axes = [n1, n2]
    axes += [np.cross(e1[:, i], e2[:, j]) for i in range(3) for j in range(3)]
    axes += [np.cross(n1, e1[:, i]) for i in range(3)]
    axes += [np.cross(n2, e2[:, i]) for i in range(3)]

    scale = np.maximum(np.abs(a).max(axis=(1, 2)), np.abs(b).max(axis=(1, 2))) + 1.0
    sep = np.zeros(len(live), dtype=bool)
    for axis in axes:
        norm = np.linalg.norm(axis, axis=1)
        ok = norm > 1e-14 * scale * scale
        unit = axis / np.where(ok, norm, 1.0)[:, None]
        a_lo, a_hi = _interval(a, unit)
        b_lo, b_hi = _interval(b, unit)
        sep |= ok & (np.maximum(b_lo - a_hi, a_lo - b_hi) > eps)
    separated[live] = sep
    return ~separated


def _share_vertex(faces: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    fi, fj = faces[i], faces[j]
    return np.any(fi[:, :, None] == fj[:, None, :], axis=(1, 2))


def _test_pairs(vertices: np.ndarray, faces: np.ndarray, i: np.ndarray, j: np.ndarray, eps: float) -> np.ndarray:
    keep = ~_share_vertex(faces, i, j)
    i, j = i[keep], j[keep]
    if len(i) == 0:
        return np.empty((0, 2), dtype=np.int64)
    hits = np.zeros(len(i), dtype=bool)
    chunk = 200_000
    for s in range(0, len(i), chunk):
        hits[s:s + chunk] = triangles_intersect(vertices[faces[i[s:s + chunk]]], vertices[faces[j[s:s + chunk]]], eps)
    return np.column_stack([i[hits], j[hits]]).astype(np.int64)


def _normalize_pairs(pairs: np.ndarray) -> list[tuple[int, int]]:
    if len(pairs) == 0:
        return []
    pairs = np.sort(pairs, axis=1)
    pairs = np.unique(pairs, axis=0)
    return [(int(a), int(b)) for a, b in pairs]


def self_intersections_brute_force(vertices: np.ndarray, faces: np.ndarray, eps: float = EPS) -> list[tuple[int, int]]:
    """All-pairs reference enumeration, O(F^2)."""
    faces = np.asarray(faces, dtype=np.int64)
    i, j = np.triu_indices(len(faces), k=1)
    return _normalize_pairs(_test_pairs(np.asarray(vertices, float), faces, i, j, eps))


class BVH:
    """Axis-aligned bounding-box hierarchy over triangles (median split)."""

    def __init__(self, triangles: np.ndarray, leaf_size: int = _LEAF_SIZE):
        tri = np.asarray(triangles, dtype=float)
        self.lo_tri = tri.min(axis=1)
        self.hi_tri = tri.max(axis=1)
        centers = 0.5 * (self.lo_tri + self.hi_tri)
        self.order = np.arange(len(tri))
        self.lo: list[np.ndarray] = []
        self.hi: list[np.ndarray] = []
        self.children: list[tuple[int, int] | None] = []
        self.ranges: list[tuple[int, int]] = []
        if len(tri):
            self._build(0, len(tri), centers, leaf_size)

    def _build(self, start: int, stop: int, centers: np.ndarray, leaf_size: int) -> int:
        idx = self.order[start:stop]
        node = len(self.lo)
        self.lo.append(self.lo_tri[idx].min(axis=0))
        self.hi.append(self.hi_tri[idx].max(axis=0))
        self.ranges.append((start, stop))
        self.children.append(None)
        if stop - start <= leaf_size:
            return node
        c = centers[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        sorted_idx = idx[np.argsort(c[:, axis], kind="stable")]
        self.order[start:stop] = sorted_idx
        mid = (start + stop) // 2
        left = self._build(start, mid, centers, leaf_size)
        right = self._build(mid, stop, centers, leaf_size)
        self.children[node] = (left, right)
        return node

    def _overlap(self, a: int, b: int, eps: float) -> bool:
        return not (np.any(self.lo[b] - self.hi[a] > eps) or np.any(self.lo[a] - self.hi[b] > eps))

    def candidate_pairs(self, eps: float = EPS) -> tuple[np.ndarray, np.ndarray]:
        """Triangle pairs (i < j) whose boxes overlap within ``eps``."""
        if not self.lo:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        out_i: list[np.ndarray] = []
        out_j: list[np.ndarray] = []
        stack = [(0, 0)]
        while stack:
            a, b = stack.pop()
            if not self._overlap(a, b, eps):
                continue
            ca, cb = self.children[a], self.children[b]
            if ca is None and cb is None:
                ia = self.order[slice(*self.ranges[a])]
                ib = self.order[slice(*self.ranges[b])]
                gi, gj = np.meshgrid(ia, ib, indexing="ij")
                gi, gj = gi.ravel(), gj.ravel()
                keep = gi < gj if a == b else gi != gj
                gi, gj = gi[keep], gj[keep]
                lo_gap = np.maximum(self.lo_tri[gj] - self.hi_tri[gi], self.lo_tri[gi] - self.hi_tri[gj])
                box = ~np.any(lo_gap > eps, axis=1)
                out_i.append(np.minimum(gi[box], gj[box]))
                out_j.append(np.maximum(gi[box], gj[box]))
            elif a == b:
                left, right = ca
                stack.extend([(left, left), (right, right), (left, right)])
            elif ca is not None and (cb is None or self.ranges[a][1] - self.ranges[a][0] >= self.ranges[b][1] - self.ranges[b][0]):
                stack.extend([(ca[0], b), (ca[1], b)])
            else:
                stack.extend([(a, cb[0]), (a, cb[1])])
        if not out_i:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        return np.concatenate(out_i), np.concatenate(out_j)


def self_intersections(mesh_or_vertices, faces: np.ndarray | None = None, eps: float = EPS) -> list[tuple[int, int]]:
    """Sorted face-index pairs (i < j) of intersecting triangles that share no vertex."""
    if faces is None:
        vertices, faces = mesh_or_vertices.vertices, mesh_or_vertices.faces
    else:
        vertices = mesh_or_vertices
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces, dtype=np.int64)
    bvh = BVH(vertices[faces])
    i, j = bvh.candidate_pairs(eps)
    return _normalize_pairs(_test_pairs(vertices, faces, i, j, eps))
