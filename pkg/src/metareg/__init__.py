"""Metamorphic image registration with Lipschitz-bounded residual flows."""

from .core import (
    DegenerateMaskError,
    DimensionError,
    DomainError,
    InvariantError,
    MetaRegError,
    NumericalError,
    ParameterError,
    RegParams,
    ShapeError,
)
from .energy import EnergyBreakdown, energy, energy_and_grad, evaluate
from .flow import integrate, integrate_deformation, invert_deformation, metamorphic_output
from .metrics import MetricReport, evaluate_registration
from .optim import RegConfig, RegResult, register
from .phantom import PhantomSpec, gen_pair, gen_suite

__version__ = "0.1.0"

__all__ = [
    "DegenerateMaskError",
    "DimensionError",
    "DomainError",
    "EnergyBreakdown",
    "InvariantError",
    "MetaRegError",
    "MetricReport",
    "NumericalError",
    "ParameterError",
    "PhantomSpec",
    "RegConfig",
    "RegParams",
    "RegResult",
    "ShapeError",
    "energy",
    "energy_and_grad",
    "evaluate",
    "evaluate_registration",
    "gen_pair",
    "gen_suite",
    "integrate",
    "integrate_deformation",
    "invert_deformation",
    "metamorphic_output",
    "register",
]
