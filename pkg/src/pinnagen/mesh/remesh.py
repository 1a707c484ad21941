"""Isotropic and graded remeshing of closed triangle meshes.

Each pass splits edges longer than 4/3 of the local target, collapses edges
shorter than 4/5 of it, flips edges toward valence 6 and relaxes vertices
tangentially before projecting them back onto the input surface. Feature
edges (label boundaries and sharp creases) are kept: their vertices never
move, corners are never removed, and feature lines are only shortened along
themselves.

The local target is constant in uniform mode. In progressive mode it grows
linearly with Euclidean distance from a focus point, from ``target_edge_min``
at the focus to ``target_edge_max`` at the farthest input vertex.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .intersect import self_intersections
from .quality import is_manifold, is_watertight
from .trimesh import TriMesh

log = logging.getLogger(__name__)

SPLIT_RATIO = 4.0 / 3.0
COLLAPSE_RATIO = 4.0 / 5.0
MIN_PASSES = 5
MAX_PASSES = 20


class RemeshError(RuntimeError):
    pass


@dataclass(frozen=True)
class GradingConfig:
    mode: str = "uniform"
    target_edge_min: float = 5.0
    target_edge_max: float = 5.0
    focus_point: tuple[float, float, float] | None = None
    band: tuple[float, float] | None = None
    feature_angle: float = 60.0

    def __post_init__(self):
        if self.mode not in ("uniform", "progressive"):
            raise ValueError(f"unknown grading mode {self.mode!r}")
        if not 0 < self.target_edge_min <= self.target_edge_max:
            raise ValueError("need 0 < target_edge_min <= target_edge_max")
        if self.mode == "uniform" and self.target_edge_min != self.target_edge_max:
            object.__setattr__(self, "target_edge_max", self.target_edge_min)

    @property
    def compliance_fraction(self) -> float:
        return 0.95 if self.mode == "uniform" else 0.90

    @classmethod
    def uniform(cls, target: float, band=None) -> "GradingConfig":
        return cls("uniform", target, target, None, band)

    @classmethod
    def progressive(cls, target_min: float, target_max: float, focus=None, band=None) -> "GradingConfig":
        return cls("progressive", target_min, target_max, None if focus is None else tuple(map(float, focus)), band)

    def with_focus(self, focus) -> "GradingConfig":
        return GradingConfig(self.mode, self.target_edge_min, self.target_edge_max, tuple(map(float, focus)), self.band, self.feature_angle)


class SizingField:
    def __init__(self, config: GradingConfig, vertices: np.ndarray):
        self.config = config
        if config.mode == "progressive":
            if config.focus_point is None:
                raise ValueError("progressive grading needs a focus point")
            self.focus = np.asarray(config.focus_point, dtype=float)
            self.d_max = float(np.linalg.norm(vertices - self.focus, axis=1).max())
            if self.d_max <= 0:
                raise ValueError("degenerate mesh: all vertices at the focus")

    def __call__(self, points: np.ndarray) -> np.ndarray:
        c = self.config
        points = np.atleast_2d(points)
        if c.mode == "uniform":
            return np.full(len(points), c.target_edge_min)
        d = np.minimum(np.linalg.norm(points - self.focus, axis=1) / self.d_max, 1.0)
        return c.target_edge_min + (c.target_edge_max - c.target_edge_min) * d


# ----------------------------------------------------------------------------
# Closest point on triangles (reference surface for projection)


def closest_points_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point to p[i] on triangle (a[i], b[i], c[i]), vectorized."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        out = a + ab * v[:, None] + ac * w[:, None]
        # edge regions
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    on_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    out = np.where(on_bc[:, None], b + (c - b) * np.nan_to_num(t_bc)[:, None], out)
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(on_ac[:, None], a + ac * np.nan_to_num(t_ac)[:, None], out)
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(on_ab[:, None], a + ab * np.nan_to_num(t_ab)[:, None], out)
    # vertex regions
    out = np.where(((d6 >= 0) & (d5 <= d6))[:, None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[:, None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[:, None], a, out)
    return out


class _Surface:
    """Closest-point queries against the faces of one label."""

    def __init__(self, tri: np.ndarray, n_candidates: int = 12):
        self.tri = tri
        self.tree = cKDTree(tri.mean(axis=1))
        self.k = min(n_candidates, len(tri))

    def project(self, points: np.ndarray) -> np.ndarray:
        _, idx = self.tree.query(points, k=self.k)
        idx = np.asarray(idx).reshape(len(points), self.k)
        best = np.empty_like(points)
        best_d = np.full(len(points), np.inf)
        for j in range(self.k):
            t = self.tri[idx[:, j]]
            q = closest_points_on_triangles(points, t[:, 0], t[:, 1], t[:, 2])
            d = np.einsum("ij,ij->i", q - points, q - points)
            better = d < best_d
            best[better] = q[better]
            best_d[better] = d[better]
        return best


# ----------------------------------------------------------------------------
# Mutable working mesh


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


class _Work:
    def __init__(self, mesh: TriMesh, feature_angle: float):
        self.V = [v.copy() for v in mesh.vertices]
        self.F = [list(map(int, f)) for f in mesh.faces]
        self.L = [int(x) for x in mesh.labels]
        self.alive = [True] * len(self.F)
        self.vf: list[set[int]] = [set() for _ in self.V]
        for fi, f in enumerate(self.F):
            for v in f:
                self.vf[v].add(fi)
        self.features: set[tuple[int, int]] = set()
        self._detect_features(mesh, feature_angle)

    def _detect_features(self, mesh: TriMesh, feature_angle: float) -> None:
        normals = mesh.face_normals()
        cos_limit = np.cos(np.radians(feature_angle))
        by_edge: dict[tuple[int, int], list[int]] = {}
        for fi, f in enumerate(self.F):
            for k in range(3):
                by_edge.setdefault(_key(f[k], f[(k + 1) % 3]), []).append(fi)
        for e, fs in by_edge.items():
            if len(fs) != 2:
                self.features.add(e)
                continue
            f0, f1 = fs
            if self.L[f0] != self.L[f1] or np.dot(normals[f0], normals[f1]) < cos_limit:
                self.features.add(e)

    # -- queries
    def feature_degree(self, v: int) -> int:
        return sum(1 for u in self.neighbors(v) if _key(u, v) in self.features)

    def is_feature_vertex(self, v: int) -> bool:
        return self.feature_degree(v) > 0

    def is_corner(self, v: int) -> bool:
        d = self.feature_degree(v)
        return d > 0 and d != 2

    def neighbors(self, v: int) -> set[int]:
        out = set()
        for fi in self.vf[v]:
            out.update(self.F[fi])
        out.discard(v)
        return out

    def edge_faces(self, a: int, b: int) -> list[int]:
        return sorted(self.vf[a] & self.vf[b])

    def opposite(self, fi: int, a: int, b: int) -> int:
        for v in self.F[fi]:
            if v != a and v != b:
                return v
        raise RuntimeError("bad face")

    def edges(self) -> list[tuple[int, int]]:
        out = set()
        for fi, f in enumerate(self.F):
            if self.alive[fi]:
                for k in range(3):
                    out.add(_key(f[k], f[(k + 1) % 3]))
        return sorted(out)

    def face_normal(self, f, positions=None) -> np.ndarray:
        p = [self.V[v] if positions is None or v not in positions else positions[v] for v in f]
        return np.cross(p[1] - p[0], p[2] - p[0])

    # -- edits
    def _add_face(self, f: list[int], label: int) -> int:
        fi = len(self.F)
        self.F.append(f)
        self.L.append(label)
        self.alive.append(True)
        for v in f:
            self.vf[v].add(fi)
        return fi

    def _kill_face(self, fi: int) -> None:
        self.alive[fi] = False
        for v in self.F[fi]:
            self.vf[v].discard(fi)

    def split(self, a: int, b: int) -> int:
        m = len(self.V)
        self.V.append(0.5 * (self.V[a] + self.V[b]))
        self.vf.append(set())
        for fi in self.edge_faces(a, b):
            f = self.F[fi]
            k = f.index(a)
            # rotate so the face reads (x, y, z) with the split edge (x, y)
            if f[(k + 1) % 3] == b:
                x, y = a, b
            else:
                x, y = b, a
            z = self.opposite(fi, a, b)
            label = self.L[fi]
            self._kill_face(fi)
            self._add_face([x, m, z], label)
            self._add_face([m, y, z], label)
        if _key(a, b) in self.features:
            self.features.discard(_key(a, b))
            self.features.add(_key(a, m))
            self.features.add(_key(m, b))
        return m

    def collapse(self, keep: int, gone: int, position: np.ndarray) -> None:
        shared = self.edge_faces(keep, gone)
        was_feature = _key(keep, gone) in self.features
        gone_feature_nbrs = [u for u in self.neighbors(gone) if u != keep and _key(u, gone) in self.features]
        for fi in shared:
            self._kill_face(fi)
        for fi in list(self.vf[gone]):
            f = self.F[fi]
            self.F[fi] = [keep if v == gone else v for v in f]
            self.vf[keep].add(fi)
        self.vf[gone] = set()
        self.V[keep] = position
        self.features = {e for e in self.features if gone not in e}
        if was_feature:
            for u in gone_feature_nbrs:
                self.features.add(_key(keep, u))

    def flip(self, a: int, b: int) -> None:
        f0, f1 = self.edge_faces(a, b)
        fa = self.F[f0]
        k = fa.index(a)
        if fa[(k + 1) % 3] != b:
            f0, f1 = f1, f0
        c = self.opposite(f0, a, b)
        d = self.opposite(f1, a, b)
        label = self.L[f0]
        self._kill_face(f0)
        self._kill_face(f1)
        self._add_face([c, a, d], label)
        self._add_face([d, b, c], label)

    def to_mesh(self) -> TriMesh:
        faces = np.array([f for f, ok in zip(self.F, self.alive) if ok], dtype=np.int64)
        labels = np.array([lab for lab, ok in zip(self.L, self.alive) if ok], dtype=np.int64)
        used = np.unique(faces)
        remap = -np.ones(len(self.V), dtype=np.int64)
        remap[used] = np.arange(len(used))
        verts = np.array([self.V[i] for i in used])
        return TriMesh(verts, remap[faces], labels)


# ----------------------------------------------------------------------------
# Passes


def _split_long(w: _Work, sizing: SizingField) -> int:
    edges = w.edges()
    if not edges:
        return 0
    e = np.array(edges)
    V = np.array(w.V)
    length = np.linalg.norm(V[e[:, 0]] - V[e[:, 1]], axis=1)
    target = sizing(0.5 * (V[e[:, 0]] + V[e[:, 1]]))
    order = np.argsort(-length / target, kind="stable")
    count = 0
    for i in order:
        if length[i] <= SPLIT_RATIO * target[i]:
            break
        a, b = edges[i]
        if len(w.edge_faces(a, b)) != 2:
            continue
        w.split(a, b)
        count += 1
    return count


def _collapse_ok(w: _Work, keep: int, gone: int, pos: np.ndarray, sizing: SizingField) -> bool:
    shared = w.edge_faces(keep, gone)
    if len(shared) != 2:
        return False
    opp = {w.opposite(fi, keep, gone) for fi in shared}
    # link condition: the only common neighbors are the two opposite vertices
    if (w.neighbors(keep) & w.neighbors(gone)) != opp:
        return False
    for o in opp:
        if len(w.neighbors(o)) <= 3:
            return False
        if _key(o, gone) in w.features:
            return False
    if len(w.neighbors(keep)) + len(w.neighbors(gone)) - 4 < 3:
        return False
    # resulting edges must not be too long
    hi = SPLIT_RATIO
    for u in w.neighbors(gone) | w.neighbors(keep):
        if u in (keep, gone):
            continue
        mid = 0.5 * (pos + w.V[u])
        if np.linalg.norm(pos - w.V[u]) > hi * sizing(mid[None])[0]:
            return False
    # no face may flip or become degenerate
    moved = {keep: pos, gone: pos}
    for v in (keep, gone):
        for fi in w.vf[v]:
            if fi in shared:
                continue
            f = w.F[fi]
            old = w.face_normal(f)
            new = w.face_normal(f, moved)
            n_old, n_new = np.linalg.norm(old), np.linalg.norm(new)
            if n_new < 1e-12 * max(n_old, 1e-30) or n_new == 0:
                return False
            if np.dot(old, new) < 0.5 * n_old * n_new:
                return False
    return True


def _collapse_short(w: _Work, sizing: SizingField) -> int:
    edges = w.edges()
    if not edges:
        return 0
    e = np.array(edges)
    V = np.array(w.V)
    length = np.linalg.norm(V[e[:, 0]] - V[e[:, 1]], axis=1)
    target = sizing(0.5 * (V[e[:, 0]] + V[e[:, 1]]))
    order = np.argsort(length / target, kind="stable")
    count = 0
    for i in order:
        a, b = edges[i]
        if not w.vf[a] or not w.vf[b]:
            continue
        cur = np.linalg.norm(w.V[a] - w.V[b])
        mid = 0.5 * (w.V[a] + w.V[b])
        if cur >= COLLAPSE_RATIO * sizing(mid[None])[0]:
            if length[i] >= COLLAPSE_RATIO * target[i]:
                break
            continue
        fa, fb = w.is_feature_vertex(a), w.is_feature_vertex(b)
        if not fa and not fb:
            keep, gone, pos = a, b, mid
        elif fa and not fb:
            keep, gone, pos = a, b, w.V[a].copy()
        elif fb and not fa:
            keep, gone, pos = b, a, w.V[b].copy()
        else:
            if _key(a, b) not in w.features:
                continue
            ca, cb = w.is_corner(a), w.is_corner(b)
            if ca and cb:
                continue
            keep, gone = (a, b) if not cb else (b, a)
            if w.is_corner(gone):
                continue
            pos = w.V[keep].copy()
        if _collapse_ok(w, keep, gone, pos, sizing):
            w.collapse(keep, gone, pos)
            count += 1
    return count


def _flip_valence(w: _Work) -> int:
    count = 0
    for a, b in w.edges():
        if _key(a, b) in w.features:
            continue
        fs = w.edge_faces(a, b)
        if len(fs) != 2:
            continue
        c = w.opposite(fs[0], a, b)
        d = w.opposite(fs[1], a, b)
        if c == d or d in w.neighbors(c):
            continue
        # a new edge between two feature vertices would be an unsplittable chord
        if w.is_feature_vertex(c) and w.is_feature_vertex(d):
            continue
        va, vb, vc, vd = (len(w.neighbors(v)) for v in (a, b, c, d))
        if va <= 3 or vb <= 3:
            continue
        before = (va - 6) ** 2 + (vb - 6) ** 2 + (vc - 6) ** 2 + (vd - 6) ** 2
        after = (va - 7) ** 2 + (vb - 7) ** 2 + (vc - 5) ** 2 + (vd - 5) ** 2
        if after >= before:
            continue
        # geometric sanity: new triangles keep the orientation of the old pair
        f0 = w.F[fs[0]]
        k = f0.index(a)
        x, y = (a, b) if f0[(k + 1) % 3] == b else (b, a)
        z0 = w.opposite(fs[0], a, b)
        z1 = w.opposite(fs[1], a, b)
        n_old = w.face_normal([x, y, z0]) + w.face_normal([y, x, z1])
        n1 = w.face_normal([z0, x, z1])
        n2 = w.face_normal([z1, y, z0])
        m_old = np.linalg.norm(n_old)
        m1, m2 = np.linalg.norm(n1), np.linalg.norm(n2)
        if m1 == 0 or m2 == 0 or m_old == 0:
            continue
        if np.dot(n1, n_old) < 0.7 * m1 * m_old or np.dot(n2, n_old) < 0.7 * m2 * m_old or np.dot(n1, n2) < 0.5 * m1 * m2:
            continue
        w.flip(a, b)
        count += 1
    return count


def _smooth(w: _Work, surfaces: dict[int, _Surface], damping: float = 0.5) -> None:
    active = [v for v in range(len(w.V)) if w.vf[v] and not w.is_feature_vertex(v)]
    if not active:
        return
    V = np.array(w.V)
    F = np.array([f for f, ok in zip(w.F, w.alive) if ok])
    fn = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
    vn = np.zeros_like(V)
    for k in range(3):
        np.add.at(vn, F[:, k], fn)
    vn /= np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)
    target = np.empty((len(active), 3))
    for i, v in enumerate(active):
        target[i] = V[list(w.neighbors(v))].mean(axis=0)
    pos = V[active]
    move = target - pos
    move -= np.einsum("ij,ij->i", move, vn[active])[:, None] * vn[active]
    new = pos + damping * move
    labels = np.array([w.L[next(iter(w.vf[v]))] for v in active])
    for lab, surf in surfaces.items():
        sel = labels == lab
        if np.any(sel):
            new[sel] = surf.project(new[sel])
    # reject moves that would flip an incident face
    for i, v in enumerate(active):
        ok = True
        for fi in w.vf[v]:
            f = w.F[fi]
            old = w.face_normal(f)
            nw = w.face_normal(f, {v: new[i]})
            if np.dot(old, nw) <= 0.2 * np.linalg.norm(old) * np.linalg.norm(nw):
                ok = False
                break
        if ok:
            w.V[v] = new[i]


def compliance(mesh: TriMesh, sizing: SizingField) -> float:
    """Fraction of edges whose length lies within [0.5, 1.5] of the local target."""
    e = mesh.edges()
    a, b = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    ratio = np.linalg.norm(a - b, axis=1) / sizing(0.5 * (a + b))
    return float(np.mean((ratio >= 0.5) & (ratio <= 1.5)))


def grade_mesh(mesh: TriMesh, config: GradingConfig, check_intersections: bool = True) -> TriMesh:
    """Remesh a closed manifold mesh toward the edge-length field of ``config``."""
    if not (is_watertight(mesh) and is_manifold(mesh)):
        raise RemeshError("input must be a watertight manifold mesh")
    sizing = SizingField(config, mesh.vertices)
    tri = mesh.triangles()
    surfaces = {int(lab): _Surface(tri[mesh.labels == lab]) for lab in np.unique(mesh.labels)}
    w = _Work(mesh, config.feature_angle)
    score = 0.0
    for it in range(1, MAX_PASSES + 1):
        n_split = _split_long(w, sizing)
        n_collapse = _collapse_short(w, sizing)
        n_flip = _flip_valence(w)
        _smooth(w, surfaces)
        out = w.to_mesh()
        score = compliance(out, sizing)
        log.debug("pass %d: split %d collapse %d flip %d compliance %.3f faces %d", it, n_split, n_collapse, n_flip, score, out.n_faces)
        if it >= MIN_PASSES and score >= config.compliance_fraction:
            break
    else:
        raise RemeshError(f"edge-length compliance {score:.3f} below {config.compliance_fraction} after {MAX_PASSES} passes")
    if not (is_watertight(out) and is_manifold(out)):
        raise RemeshError("remeshing broke watertightness")
    if check_intersections:
        hits = self_intersections(out)
        if hits:
            raise RemeshError(f"remeshed surface self-intersects ({len(hits)} face pairs)")
    return out
