"""PCA statistical shape model over registered point clouds.

Each subject is one row of ``3 n_v`` coordinates laid out as all x, then all
y, then all z (millimeters). The model keeps exactly n - 1 components: with n
centered samples the covariance has rank at most n - 1, so later components
carry no variance.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEGENERATE_RATIO = 1e-12
SWEEP_LAMBDAS = (-5.0, -3.0, -1.0, 1.0, 3.0, 5.0)


@dataclass(frozen=True)
class FaceTopology:
    """Shared triangle connectivity of a registered dataset."""

    faces: np.ndarray

    def __post_init__(self):
        faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) and faces.min() < 0:
            raise ValueError("negative vertex index in topology")
        if np.any((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])):
            raise ValueError("degenerate face (repeated vertex index) in topology")
        faces.setflags(write=False)
        object.__setattr__(self, "faces", faces)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def check_vertex_count(self, n_vertices: int) -> None:
        if len(self.faces) and self.faces.max() >= n_vertices:
            raise ValueError(f"topology references vertex {self.faces.max()} but shapes have {n_vertices}")


@dataclass
class RegisteredPointCloudSet:
    data: np.ndarray
    topology: FaceTopology
    subject_ids: list[str] = field(default_factory=list)
    boundary_loops: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValueError("data must be an n x 3n_v matrix (mismatched row lengths?)")
        if data.shape[0] < 2:
            raise ValueError("at least 2 subjects are required")
        if data.shape[1] % 3:
            raise ValueError("row length must be a multiple of 3")
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite coordinates in dataset")
        self.data = data
        self.topology.check_vertex_count(self.n_vertices)
        if not self.subject_ids:
            self.subject_ids = [f"subject{i:03d}" for i in range(self.n_subjects)]
        if len(self.subject_ids) != self.n_subjects:
            raise ValueError("one subject id per row required")

    @property
    def n_subjects(self) -> int:
        return self.data.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.data.shape[1] // 3

    @classmethod
    def from_rows(cls, rows, topology: FaceTopology, subject_ids=None, boundary_loops=None):
        lengths = {len(r) for r in rows}
        if len(lengths) > 1:
            raise ValueError(f"mismatched row lengths: {sorted(lengths)}")
        return cls(np.array(rows, dtype=float), topology, list(subject_ids or []), dict(boundary_loops or {}))


def vertices_from_flat(shape: np.ndarray) -> np.ndarray:
    shape = np.asarray(shape, dtype=float)
    if shape.ndim != 1 or len(shape) % 3:
        raise ValueError("shape vector length must be a multiple of 3")
    return shape.reshape(3, -1).T.copy()


def flat_from_vertices(vertices: np.ndarray) -> np.ndarray:
    return np.asarray(vertices, dtype=float).T.reshape(-1).copy()


@dataclass(frozen=True)
class PcaModel:
    """Mean, orthonormal basis rows and per-component standard deviations."""

    mean: np.ndarray
    basis: np.ndarray
    sigmas: np.ndarray
    n_subjects: int

    def __post_init__(self):
        for name in ("mean", "basis", "sigmas"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return len(self.sigmas)

    @property
    def dim(self) -> int:
        return len(self.mean)

    @property
    def variances(self) -> np.ndarray:
        return self.sigmas ** 2

    @property
    def degenerate(self) -> np.ndarray:
        """Components whose variance is negligible relative to the first."""
        v = self.variances
        if len(v) == 0 or v[0] == 0:
            return np.ones(len(v), dtype=bool)
        return v < DEGENERATE_RATIO * v[0]


ShapeModel = PcaModel


def fit_pca(data: np.ndarray) -> PcaModel:
    """PCA of the rows of ``data`` through the SVD of the centered matrix.

    Keeps n - 1 components; each basis row is signed so that its
    largest-magnitude coefficient is positive.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("data must be a 2-D matrix")
    n = x.shape[0]
    if n < 2:
        raise ValueError("at least 2 subjects are required")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in data")
    k = n - 1
    if x.shape[1] < k:
        raise ValueError(f"dimension {x.shape[1]} is below n - 1 = {k}; cannot keep n - 1 orthonormal components")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    basis = vt[:k].copy()
    sigmas = s[:k] / np.sqrt(n - 1)
    for j in range(basis.shape[0]):
        row = basis[j]
        if np.any(row):
            pivot = np.argmax(np.abs(row))
            if row[pivot] < 0:
                basis[j] = -row
    return PcaModel(mean, basis, sigmas, n)


def fit_shape_model(dataset: RegisteredPointCloudSet) -> PcaModel:
    return fit_pca(dataset.data)


def project(model: PcaModel, shape: np.ndarray) -> np.ndarray:
    """PC weights of one shape (vector) or many shapes (rows)."""
    x = np.asarray(shape, dtype=float)
    if x.shape[-1] != model.dim:
        raise ValueError(f"shape length {x.shape[-1]} does not match model dimension {model.dim}")
    return (x - model.mean) @ model.basis.T


def _check_components(model: PcaModel, p: int, what: str = "p") -> None:
    if not 1 <= p <= model.n_components:
        raise ValueError(f"{what} must be in [1, {model.n_components}], got {p}")


def reconstruct(model: PcaModel, weights: np.ndarray, p_retained: int | None = None) -> np.ndarray:
    """Shape(s) from weights, zeroing components beyond ``p_retained``."""
    y = np.array(weights, dtype=float)
    if y.shape[-1] > model.n_components:
        raise ValueError(f"{y.shape[-1]} weights given but the model has {model.n_components} components")
    p = y.shape[-1] if p_retained is None else p_retained
    _check_components(model, p, "p_retained")
    y[..., p:] = 0.0
    return y @ model.basis[: y.shape[-1]] + model.mean


def pc_sweep(model: PcaModel, j: int, lam: float) -> np.ndarray:
    """Mean shape moved by ``lam`` standard deviations along PC ``j`` (1-based)."""
    _check_components(model, j, "j")
    return model.mean + lam * model.sigmas[j - 1] * model.basis[j - 1]


def vertex_distance_to_mean(model: PcaModel, shape: np.ndarray) -> np.ndarray:
    """Per-vertex Euclidean distance between ``shape`` and the mean shape."""
    return np.linalg.norm(vertices_from_flat(shape) - vertices_from_flat(model.mean), axis=1)


def cpv_curve(model: PcaModel) -> np.ndarray:
    """Cumulative percentage of variance for p = 1 .. n - 1."""
    v = model.variances
    total = v.sum()
    if not total > 0:
        raise ValueError("model has zero total variance; CPV undefined")
    curve = 100.0 * np.cumsum(v) / total
    curve[-1] = 100.0
    return curve


def cpv(model: PcaModel, p: int) -> float:
    _check_components(model, p)
    return float(cpv_curve(model)[p - 1])


# ----------------------------------------------------------------------------
# Persistence: JSON manifest + little-endian float64 row-major binaries


def write_f8(path: str | Path, array: np.ndarray) -> str:
    """Write ``array`` as raw little-endian float64; returns its sha256."""
    raw = np.ascontiguousarray(array, dtype="<f8").tobytes()
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def read_f8(path: str | Path, shape) -> np.ndarray:
    arr = np.fromfile(path, dtype="<f8")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise ValueError(f"{path}: expected {expected} values, found {arr.size}")
    return arr.reshape(shape).astype(float)


def write_faces(path: str | Path, topology: FaceTopology) -> None:
    Path(path).write_text("".join(f"{a} {b} {c}\n" for a, b, c in topology.faces))


def read_faces(path: str | Path) -> FaceTopology:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    return FaceTopology(np.array(rows, dtype=np.int64).reshape(-1, 3))


def save_dataset(dataset: RegisteredPointCloudSet, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    digest = write_f8(d / "shapes.f8", dataset.data)
    write_faces(d / "faces.txt", dataset.topology)
    manifest = {
        "n": dataset.n_subjects,
        "n_v": dataset.n_vertices,
        "subject_ids": dataset.subject_ids,
        "data": "shapes.f8",
        "faces": "faces.txt",
        "sha256": digest,
        "layout": "row-major n x 3n_v, per row x..x y..y z..z, little-endian float64, mm",
    }
    if dataset.boundary_loops:
        manifest["boundary_loops"] = dataset.boundary_loops
    path = d / "dataset.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_dataset(manifest_path: str | Path) -> RegisteredPointCloudSet:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "dataset.json"
    meta = json.loads(path.read_text())
    n, n_v = int(meta["n"]), int(meta["n_v"])
    data = read_f8(path.parent / meta["data"], (n, 3 * n_v))
    topology = read_faces(path.parent / meta["faces"])
    loops = {k: [int(i) for i in v] for k, v in meta.get("boundary_loops", {}).items()}
    return RegisteredPointCloudSet(data, topology, list(meta["subject_ids"]), loops)


def save_model(model: PcaModel, directory: str | Path, kind: str = "shape") -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": kind,
        "n_subjects": model.n_subjects,
        "n_components": model.n_components,
        "dim": model.dim,
        "files": {
            "mean": ["mean.f8", write_f8(d / "mean.f8", model.mean)],
            "basis": ["basis.f8", write_f8(d / "basis.f8", model.basis)],
            "sigmas": ["sigmas.f8", write_f8(d / "sigmas.f8", model.sigmas)],
        },
    }
    path = d / "model.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_model(directory: str | Path) -> PcaModel:
    d = Path(directory)
    if d.is_file():
        d = d.parent
    meta = json.loads((d / "model.json").read_text())
    k, dim = meta["n_components"], meta["dim"]
    return PcaModel(
        read_f8(d / "mean.f8", (dim,)),
        read_f8(d / "basis.f8", (k, dim)),
        read_f8(d / "sigmas.f8", (k,)),
        meta["n_subjects"],
    )
