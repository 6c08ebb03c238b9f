"""Semilinear delay systems with non-instantaneous impulses and non-local
initial conditions: fixed-point solver, hypothesis checks and prolongation."""

from .core import (
    HISTORY, IMPULSE, LEFT, ODE, RIGHT, HistorySegment, Mesh, Partition, Segment, SystemSpec,
    Trajectory, Violation, build_mesh, eval_trajectory, sup_distance, translate, validate_spec,
)
from .errors import DomainError, NumericError
from .evolution import EvolutionCache, build_cache, build_fundamental, evolution_op, norm_bound
from .hypotheses import (
    CAVEAT, ConstantSet, HypothesisReport, check_hypotheses, estimate_K_Psi, estimate_lipschitz_g,
    estimate_lipschitz_impulses, find_rho,
)
from .operators import OperatorParams, apply_F, apply_J, characterization_residual, phi_tilde
from .prolongation import boundary_alternative_check, extend_solution, gronwall_bound
from .solver import SolveDiagnostics, SolveOptions, solve, uniqueness_probe, verify_solution

__version__ = "0.1.0"

__all__ = [
    "HISTORY",
    "IMPULSE",
    "LEFT",
    "ODE",
    "RIGHT",
    "HistorySegment",
    "Mesh",
    "Partition",
    "Segment",
    "SystemSpec",
    "Trajectory",
    "Violation",
    "build_mesh",
    "eval_trajectory",
    "sup_distance",
    "translate",
    "validate_spec",
    "DomainError",
    "NumericError",
    "EvolutionCache",
    "build_cache",
    "build_fundamental",
    "evolution_op",
    "norm_bound",
    "CAVEAT",
    "ConstantSet",
    "HypothesisReport",
    "check_hypotheses",
    "estimate_K_Psi",
    "estimate_lipschitz_g",
    "estimate_lipschitz_impulses",
    "find_rho",
    "OperatorParams",
    "apply_F",
    "apply_J",
    "characterization_residual",
    "phi_tilde",
    "boundary_alternative_check",
    "extend_solution",
    "gronwall_bound",
    "SolveDiagnostics",
    "SolveOptions",
    "solve",
    "uniqueness_probe",
    "verify_solution",
]
