"""Random shapes from the PCA model and the mesh quality gate.

Weights are drawn with numpy's PCG64 bit generator seeded from a 64-bit
integer, component j from Normal(0, sigma_j), row by row, so a batch is
reproducible across platforms for a given numpy version.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh.closing import build_mesh
from .mesh.intersect import self_intersections
from .mesh.quality import DEGENERATE_AREA, is_manifold
from .shape_model import FaceTopology, PcaModel
from .stats import NormalityReport, royston_test


@dataclass
class DrawBatch:
    weights: np.ndarray
    seed: int
    kept_mask: np.ndarray = None
    rejection_reasons: list[list[str]] = field(default=None)
    sub_seeds: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise ValueError("weights must be an N x (n - 1) matrix")
        n = len(self.weights)
        if self.kept_mask is None:
            self.kept_mask = np.ones(n, dtype=bool)
        self.kept_mask = np.asarray(self.kept_mask, dtype=bool)
        if self.rejection_reasons is None:
            self.rejection_reasons = [[] for _ in range(n)]
        if len(self.kept_mask) != n or len(self.rejection_reasons) != n:
            raise ValueError("kept_mask and reasons must have one entry per row")

    @property
    def count(self) -> int:
        return len(self.weights)

    @property
    def rejection_rate(self) -> float:
        return float(1.0 - self.kept_mask.mean()) if self.count else 0.0

    def kept_indices(self) -> np.ndarray:
        return np.flatnonzero(self.kept_mask)


def draw_pc_weights(model: PcaModel, count: int, seed: int) -> DrawBatch:
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    z = rng.standard_normal((count, model.n_components))
    return DrawBatch(z * model.sigmas[None, :], int(seed))


def synthesize_shapes(model: PcaModel, batch: DrawBatch | np.ndarray) -> np.ndarray:
    """Rows of shapes: weights times basis plus mean."""
    y = batch.weights if isinstance(batch, DrawBatch) else np.atleast_2d(np.asarray(batch, dtype=float))
    if y.shape[1] != model.n_components:
        raise ValueError(f"weights have {y.shape[1]} columns, model has {model.n_components} components")
    # accumulate component by component: a batched matmul would round each row
    # differently depending on how many rows share the call
    out = np.broadcast_to(model.mean, (len(y), model.dim)).copy()
    for j in range(model.n_components):
        out += y[:, j, None] * model.basis[j]
    return out


def gate_shape(shape: np.ndarray, topology: FaceTopology) -> list[str]:
    """Reasons the mesh derived from ``shape`` is unfit; empty when it passes."""
    mesh = build_mesh(shape, topology)
    reasons = []
    if not is_manifold(mesh):
        reasons.append("non-manifold")
    n_deg = int(np.sum(mesh.face_areas() < DEGENERATE_AREA))
    if n_deg:
        reasons.append(f"degenerate faces: {n_deg}")
    hits = self_intersections(mesh)
    if hits:
        reasons.append(f"self-intersections: {len(hits)}")
    return reasons


def quality_filter(shapes: np.ndarray, topology: FaceTopology, batch: DrawBatch | None = None) -> DrawBatch:
    """Gate every shape; returns ``batch`` (or a fresh one) with mask and reasons set."""
    shapes = np.atleast_2d(shapes)
    if batch is None:
        batch = DrawBatch(np.zeros((len(shapes), 0)), 0)
    if batch.count != len(shapes):
        raise ValueError("batch and shapes differ in length")
    for i, shape in enumerate(shapes):
        reasons = gate_shape(shape, topology)
        batch.rejection_reasons[i] = reasons
        batch.kept_mask[i] = not reasons
    return batch


def draw_until_kept(model: PcaModel, topology: FaceTopology, count: int, seed: int, max_rounds: int = 100) -> DrawBatch:
    """Redraw with sequential sub-seeds (seed, seed + 1, ...) until ``count``
    shapes pass the gate; returns exactly ``count`` kept rows plus every
    rejected row encountered, in draw order."""
    weights, kept, reasons, seeds = [], [], [], []
    n_kept = 0
    for r in range(max_rounds):
        sub = seed + r
        need = count - n_kept
        batch = draw_pc_weights(model, need, sub)
        quality_filter(synthesize_shapes(model, batch), topology, batch)
        weights.append(batch.weights)
        kept.append(batch.kept_mask)
        reasons += batch.rejection_reasons
        seeds.append(sub)
        n_kept += int(batch.kept_mask.sum())
        if n_kept >= count:
            break
    else:
        raise RuntimeError(f"only {n_kept} of {count} shapes passed after {max_rounds} rounds")
    return DrawBatch(np.vstack(weights), seed, np.concatenate(kept), reasons, seeds)


@dataclass
class GateReport:
    n_drawn: int
    n_kept: int
    rejection_rate: float
    royston_before: NormalityReport | None
    royston_after: NormalityReport | None

    def as_dict(self) -> dict:
        return {
            "n_drawn": self.n_drawn,
            "n_kept": self.n_kept,
            "rejection_rate": self.rejection_rate,
            "royston_before": self.royston_before.as_dict() if self.royston_before else None,
            "royston_after": self.royston_after.as_dict() if self.royston_after else None,
        }


def _royston_or_none(weights: np.ndarray) -> NormalityReport | None:
    if len(weights) < 3 or weights.shape[1] == 0:
        return None
    spread = np.std(weights, axis=0)
    keep = spread > 1e-6 * spread.max() if spread.max() > 0 else spread > 0
    if not np.any(keep):
        return None
    try:
        return royston_test(weights[:, keep])
    except ValueError:
        return None


def gate_report(batch: DrawBatch) -> GateReport:
    """Normality of the drawn weights before and after gating (report only)."""
    return GateReport(
        batch.count,
        int(batch.kept_mask.sum()),
        batch.rejection_rate,
        _royston_or_none(batch.weights),
        _royston_or_none(batch.weights[batch.kept_mask]),
    )
