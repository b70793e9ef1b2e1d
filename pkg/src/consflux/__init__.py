"""Locally conservative fluxes from continuous Galerkin Darcy solutions.

Q1 pressure solver, face flux extraction, weighted least-squares flux
correction and upwind transport on 2D quadrilateral meshes with hanging
nodes.
"""

from .flow import DirichletMode, FlowProblem, FlowSolver, PermeabilityField, solve_stationary
from .flux import AveragingScheme, FaceField, exact_flux, extract_flux
from .linalg import SolverConfig, SolverError
from .mesh import FaceMarker, Mesh, build_cartesian, build_tensor, distort, refine_cells, refine_global
from .postprocess import (IncompatibleSourceError, PostProcessor, SourceSpec, WeightScheme,
                          conservation_report, postprocess_flux)
from .transport import TransportProblem, TransportSolver, TransportState, overshoot

__version__ = "0.1.0"

__all__ = [
    "AveragingScheme",
    "DirichletMode",
    "FaceField",
    "FaceMarker",
    "FlowProblem",
    "FlowSolver",
    "IncompatibleSourceError",
    "Mesh",
    "PermeabilityField",
    "PostProcessor",
    "SolverConfig",
    "SolverError",
    "SourceSpec",
    "TransportProblem",
    "TransportSolver",
    "TransportState",
    "WeightScheme",
    "build_cartesian",
    "build_tensor",
    "conservation_report",
    "distort",
    "exact_flux",
    "extract_flux",
    "overshoot",
    "postprocess_flux",
    "refine_cells",
    "refine_global",
    "solve_stationary",
]
