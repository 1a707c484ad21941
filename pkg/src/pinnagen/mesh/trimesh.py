"""Triangle mesh container, topology queries and ASCII PLY/OFF I/O.

Coordinates are millimeters unless stated otherwise. Faces carry an integer
label so that regions (the canal cap used as acoustic source, the base) survive
closing and remeshing.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LABEL_SURFACE = 0
LABEL_SOURCE = 1
LABEL_BASE = 2


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.labels is None:
            self.labels = np.zeros(len(self.faces), dtype=np.int64)
        else:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.labels) != len(self.faces):
            raise ValueError("one label per face required")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise ValueError("vertex coordinates must be finite")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy(), self.labels.copy())

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_normals(self, unit: bool = True) -> np.ndarray:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        if unit:
            norm = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.where(norm > 0, norm, 1.0)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def centroids(self) -> np.ndarray:
        return self.triangles().mean(axis=1)

    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted vertex pairs."""
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges()
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def volume(self) -> float:
        """Signed enclosed volume (positive for outward-oriented closed meshes)."""
        t = self.triangles()
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces)
        return len(used) - len(self.edges()) + self.n_faces

    def edge_face_counts(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = defaultdict(int)
        for f in self.faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                counts[(a, b) if a < b else (b, a)] += 1
        return counts

    def flatten(self) -> np.ndarray:
        """Concatenated (x..x, y..y, z..z) coordinate vector."""
        return self.vertices.T.reshape(-1).copy()

    def submesh_faces(self, mask: np.ndarray) -> "TriMesh":
        return TriMesh(self.vertices, self.faces[mask], self.labels[mask])


def boundary_edges(faces: np.ndarray) -> list[tuple[int, int]]:
    """Directed boundary edges (as they appear in their single face)."""
    directed = set()
    for f in faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            directed.add((int(a), int(b)))
    return sorted((a, b) for a, b in directed if (b, a) not in directed)


def boundary_loops(faces: np.ndarray) -> list[list[int]]:
    """Closed boundary cycles, each listed in the direction of its faces' edges.

    Loops are returned longest first; raises if the boundary is not a set of
    simple cycles.
    """
    nxt: dict[int, int] = {}
    for a, b in boundary_edges(faces):
        if a in nxt:
            raise ValueError(f"non-simple boundary at vertex {a}")
        nxt[a] = b
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        v = nxt[start]
        while v != start:
            if v in seen or v not in nxt:
                raise ValueError(f"non-simple boundary at vertex {v}")
            loop.append(v)
            seen.add(v)
            v = nxt[v]
        loops.append(loop)
    loops.sort(key=lambda lp: (-len(lp), lp[0]))
    return loops


def face_adjacency(faces: np.ndarray) -> list[list[int]]:
    by_edge: dict[tuple[int, int], list[int]] = defaultdict(list)
    for fi, f in enumerate(faces):
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            by_edge[(a, b) if a < b else (b, a)].append(fi)
    adj: list[list[int]] = [[] for _ in range(len(faces))]
    for fs in by_edge.values():
        for i in fs:
            adj[i].extend(j for j in fs if j != i)
    return adj


def orient_consistently(mesh: TriMesh) -> TriMesh:
    """Propagate one winding across each connected component; closed
    components end up with positive signed volume."""
    faces = mesh.faces.copy()
    adj = face_adjacency(faces)
    visited = np.zeros(len(faces), dtype=bool)
    for seed in range(len(faces)):
        if visited[seed]:
            continue
        component = [seed]
        visited[seed] = True
        queue = deque([seed])
        while queue:
            fi = queue.popleft()
            directed = {(faces[fi][k], faces[fi][(k + 1) % 3]) for k in range(3)}
            for fj in adj[fi]:
                if visited[fj]:
                    continue
                g = faces[fj]
                if any((g[k], g[(k + 1) % 3]) in directed for k in range(3)):
                    faces[fj] = g[::-1]
                visited[fj] = True
                component.append(fj)
                queue.append(fj)
        t = mesh.vertices[faces[component]]
        vol = np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum()
        if vol < 0:
            faces[component] = faces[component][:, ::-1]
    return TriMesh(mesh.vertices, faces, mesh.labels)


def is_oriented(faces: np.ndarray) -> bool:
    directed = set()
    for f in faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            if (a, b) in directed:
                return False
            directed.add((a, b))
    return True


def compact(mesh: TriMesh) -> TriMesh:
    """Drop unreferenced vertices, preserving vertex order."""
    used = np.unique(mesh.faces)
    remap = -np.ones(mesh.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(mesh.vertices[used], remap[mesh.faces], mesh.labels)


# ----------------------------------------------------------------------------
# I/O

def _fmt(x: float) -> str:
    return repr(float(x))


def write_ply(mesh: TriMesh, path: str | Path) -> None:
    """ASCII PLY with a per-face ``label`` property; floats round-trip exactly."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {mesh.n_faces}",
        "property list uchar int vertex_indices",
        "property int label",
        "end_header",
    ]
    lines += [" ".join(_fmt(c) for c in v) for v in mesh.vertices]
    lines += [f"3 {f[0]} {f[1]} {f[2]} {lab}" for f, lab in zip(mesh.faces, mesh.labels)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path: str | Path) -> TriMesh:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_v = n_f = 0
    face_props: list[str] = []
    current = None
    i = 1
    while True:
        tok = text[i].split()
        i += 1
        if tok[0] == "format" and tok[1] != "ascii":
            raise ValueError("only ASCII PLY is supported")
        if tok[0] == "element":
            current = tok[1]
            if current == "vertex":
                n_v = int(tok[2])
            elif current == "face":
                n_f = int(tok[2])
        elif tok[0] == "property" and current == "face":
            face_props.append(tok[-1])
        elif tok[0] == "end_header":
            break
    verts = np.array([[float(x) for x in text[i + k].split()[:3]] for k in range(n_v)], dtype=float)
    i += n_v
    faces, labels = [], []
    has_label = "label" in face_props
    for k in range(n_f):
        tok = text[i + k].split()
        if tok[0] != "3":
            raise ValueError("only triangular faces are supported")
        faces.append([int(tok[1]), int(tok[2]), int(tok[3])])
        labels.append(int(tok[4]) if has_label else 0)
    return TriMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3), np.array(labels, dtype=np.int64))


def write_off(mesh: TriMesh, path: str | Path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} 0"]
    lines += [" ".join(_fmt(c) for c in v) for v in mesh.vertices]
    lines += [f"3 {f[0]} {f[1]} {f[2]}" for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_off(path: str | Path) -> TriMesh:
    tokens = [ln.split("#")[0].split() for ln in Path(path).read_text().splitlines()]
    tokens = [t for t in tokens if t]
    if tokens[0][0] != "OFF":
        raise ValueError(f"{path}: not an OFF file")
    head = tokens[0][1:] or tokens[1]
    start = 1 if tokens[0][1:] else 2
    n_v, n_f = int(head[0]), int(head[1])
    verts = np.array([[float(x) for x in tokens[start + k][:3]] for k in range(n_v)], dtype=float)
    faces = []
    for k in range(n_f):
        tok = tokens[start + n_v + k]
        if tok[0] != "3":
            raise ValueError("only triangular faces are supported")
        faces.append([int(t) for t in tok[1:4]])
    return TriMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def read_mesh(path: str | Path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".off":
        return read_off(path)
    raise ValueError(f"unsupported mesh format: {suffix}")


def write_mesh(mesh: TriMesh, path: str | Path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        write_ply(mesh, path)
    elif suffix == ".off":
        write_off(mesh, path)
    else:
        raise ValueError(f"unsupported mesh format: {suffix}")
