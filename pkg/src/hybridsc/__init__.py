"""Unbalanced hybrid AC/DC power flow and closed-form sensitivity coefficients."""

from .controls import ControlKind, ControlVariable
from .errors import (
    ContractError,
    GridFileError,
    HybridSCError,
    InvalidGrid,
    NonConvergence,
    SingularA,
    SingularJacobian,
    StructuralError,
    ZeroVoltageMagnitude,
)
from .grid import GridModel, NodeRole, Setpoints, validate_grid
from .identities import compute_fh
from .io import load_grid
from .powerflow import OperatingPoint, solve_pf

__all__ = [
    "ContractError",
    "ControlKind",
    "ControlVariable",
    "GridFileError",
    "GridModel",
    "HybridSCError",
    "InvalidGrid",
    "NodeRole",
    "NonConvergence",
    "OperatingPoint",
    "Setpoints",
    "SingularA",
    "SingularJacobian",
    "StructuralError",
    "ZeroVoltageMagnitude",
    "compute_fh",
    "load_grid",
    "solve_pf",
    "validate_grid",
]
