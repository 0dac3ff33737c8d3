"""Kantorovich-Bures distances between matrix-valued measures on the flat torus.

The distance couples transport of a positive-semidefinite matrix field with a
Bures-type reaction term. This package provides closed-form oracles, a
dynamic convex solver, the cone/spherical structure and the associated
gradient flows.
"""

__version__ = "0.1.0"

from .errors import DomainError, FormatError, InputError, KBError, NumericError, PreconditionError
from .measures import GridSpec, MatrixMeasure, synth_measure, total_mass
from .solver import SolverConfig, SolverReport, TransportPath, solve

__all__ = [
    "DomainError",
    "FormatError",
    "GridSpec",
    "InputError",
    "KBError",
    "MatrixMeasure",
    "NumericError",
    "PreconditionError",
    "SolverConfig",
    "SolverReport",
    "TransportPath",
    "solve",
    "synth_measure",
    "total_mass",
]
