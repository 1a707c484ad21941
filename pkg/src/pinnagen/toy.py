"""Synthetic registered "ear" dataset for desk-scale end-to-end runs.

Every subject is a deformed half-ellipsoid dome over the z = 0 plane with a
small hole (the canal opening). All subjects share one template topology, so
rows are in vertex-wise correspondence like a registered scan set.
"""

from __future__ import annotations

import numpy as np

from .mesh.trimesh import boundary_loops
from .shape_model import FaceTopology, RegisteredPointCloudSet, flat_from_vertices


def _ring_disk(n_rings: int):
    """Unit disk triangulated with concentric rings of 6 i vertices.

    Returns polar parameters (r in [0, 1], phi) and faces oriented so the
    normal points to +z.
    """
    r = [0.0]
    phi = [0.0]
    rings = [[0]]
    for i in range(1, n_rings + 1):
        m = 6 * i
        start = len(r)
        # stagger alternate rings to keep triangles well shaped
        offset = 0.5 * (2 * np.pi / m) * (i % 2)
        for k in range(m):
            r.append(i / n_rings)
            phi.append(offset + 2 * np.pi * k / m)
        rings.append(list(range(start, start + m)))
    faces = []
    for i in range(1, n_rings + 1):
        inner, outer = rings[i - 1], rings[i]
        if i == 1:
            for k in range(6):
                faces.append([0, outer[k], outer[(k + 1) % 6]])
            continue
        t_in = (np.array([phi[v] for v in inner]) - phi[inner[0]]) % (2 * np.pi) / (2 * np.pi)
        t_out = (np.array([phi[v] for v in outer]) - phi[inner[0]]) % (2 * np.pi) / (2 * np.pi)
        order_out = np.argsort(t_out, kind="stable")
        outer = [outer[j] for j in order_out]
        t_out = t_out[order_out]
        a = b = 0
        ni, no = len(inner), len(outer)
        while a < ni or b < no:
            nxt_in = t_in[a + 1] if a + 1 < ni else 1.0 + t_in[0]
            nxt_out = t_out[b + 1] if b + 1 < no else 1.0 + t_out[0]
            if b >= no or (a < ni and nxt_in <= nxt_out):
                faces.append([inner[a % ni], outer[b % no], inner[(a + 1) % ni]])
                a += 1
            else:
                faces.append([inner[a % ni], outer[b % no], outer[(b + 1) % no]])
                b += 1
    return np.array(r), np.array(phi), np.array(faces, dtype=np.int64), rings[-1]


class ToyEarTemplate:
    """Template dome topology with a canal hole."""

    def __init__(self, n_rings: int = 10, canal_center=(0.35, 0.0), canal_radius: float = 0.16):
        r, phi, faces, rim = _ring_disk(n_rings)
        # map disk parameters to a unit hemisphere: polar angle grows with r
        theta = r * (np.pi / 2)
        self.unit = np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        self.theta = theta
        self.phi = phi
        ux, uy = canal_center
        disk_xy = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
        centroid_xy = disk_xy[faces].mean(axis=1)
        hole = np.linalg.norm(centroid_xy - np.array([ux, uy]), axis=1) < canal_radius
        kept = faces[~hole]
        used = np.unique(kept)
        remap = -np.ones(len(r), dtype=np.int64)
        remap[used] = np.arange(len(used))
        self.unit = self.unit[used]
        self.theta = self.theta[used]
        self.phi = self.phi[used]
        self.faces = remap[kept]
        loops = boundary_loops(self.faces)
        if len(loops) != 2:
            raise RuntimeError("template should have exactly two boundary loops")
        rim_set = set(int(remap[v]) for v in rim)
        outer = [lp for lp in loops if set(lp) <= rim_set]
        canal = [lp for lp in loops if not set(lp) <= rim_set]
        self.outer_loop, self.canal_loop = outer[0], canal[0]

    @property
    def n_vertices(self) -> int:
        return len(self.unit)

    @property
    def topology(self) -> FaceTopology:
        return FaceTopology(self.faces)

    def shape(self, params: np.ndarray) -> np.ndarray:
        """Vertices for deformation parameters (standard-normal scale)."""
        g = np.asarray(params, dtype=float)
        a = 30.0 * (1.0 + 0.08 * g[0])
        b = 22.0 * (1.0 + 0.08 * g[1])
        c = 16.0 * (1.0 + 0.12 * g[2])
        x = a * self.unit[:, 0]
        y = b * self.unit[:, 1]
        z = c * self.unit[:, 2]
        # low-order bumps that vanish on the rim keep the base plane fixed
        w = np.cos(self.theta)
        z = z + 2.0 * w * np.sin(self.theta) * (g[3] * np.cos(2 * self.phi) + g[4] * np.sin(self.phi))
        x = x + 1.5 * g[5] * w * np.sin(self.theta)
        return np.column_stack([x, y, z])


def toy_dataset(n_subjects: int = 12, seed: int = 7, n_rings: int = 10) -> RegisteredPointCloudSet:
    template = ToyEarTemplate(n_rings)
    rng = np.random.default_rng(seed)
    rows = [flat_from_vertices(template.shape(rng.standard_normal(6))) for _ in range(n_subjects)]
    ids = [f"toy{i:03d}" for i in range(n_subjects)]
    loops = {"canal": template.canal_loop, "outer": template.outer_loop}
    return RegisteredPointCloudSet(np.array(rows), template.topology, ids, loops)
