"""Triangle meshes: containers, closing, grading and validity checks."""

from .closing import ClosingError, CylinderBase, build_mesh, close_mesh
from .intersect import self_intersections, self_intersections_brute_force
from .quality import MeshReport, check_mesh, elements_per_wavelength
from .remesh import GradingConfig, RemeshError, grade_mesh
from .trimesh import LABEL_BASE, LABEL_SOURCE, LABEL_SURFACE, TriMesh, boundary_loops, read_mesh, write_mesh

__all__ = [
    "ClosingError",
    "CylinderBase",
    "GradingConfig",
    "LABEL_BASE",
    "LABEL_SOURCE",
    "LABEL_SURFACE",
    "MeshReport",
    "RemeshError",
    "TriMesh",
    "boundary_loops",
    "build_mesh",
    "check_mesh",
    "close_mesh",
    "elements_per_wavelength",
    "grade_mesh",
    "read_mesh",
    "self_intersections",
    "self_intersections_brute_force",
    "write_mesh",
]
