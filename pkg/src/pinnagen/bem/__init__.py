"""Dense collocation boundary element solver and transfer-function simulation."""

from .oracles import pulsating_sphere, vibrating_cap
from .prtf import Band, FrequencySweep, simulate_frequency, simulate_prtf_set
from .solver import BemError, BemProblem, BemSolution, Medium, assemble_and_solve, default_chief_points, evaluate_field

__all__ = [
    "Band",
    "BemError",
    "BemProblem",
    "BemSolution",
    "FrequencySweep",
    "Medium",
    "assemble_and_solve",
    "default_chief_points",
    "evaluate_field",
    "pulsating_sphere",
    "simulate_frequency",
    "simulate_prtf_set",
    "vibrating_cap",
]
