"""Variational integrators on discrete tangent bundles for constrained Lagrangian systems."""

from .config import RunConfig, parse_config
from .discrete_form import DiscreteSystem, make_discrete_system
from .errors import (
    AdjacencyError,
    ConfigError,
    ConvergenceError,
    DCLSError,
    DegenerateBundleError,
    DomainError,
    FirstOrderError,
    InversionError,
    RegularityError,
    UnsupportedOperationError,
)
from .segments import Bias, FlowOfField, Linear, SegmentScheme
from .solver import SolutionPair, StepConfig, Trajectory, evolve, step
from .systems import BUILTIN_NAMES, ContinuousSystem, builtin_system

__all__ = [
    "AdjacencyError", "BUILTIN_NAMES", "Bias", "ConfigError", "ContinuousSystem", "ConvergenceError",
    "DCLSError", "DegenerateBundleError", "DiscreteSystem", "DomainError", "FirstOrderError", "FlowOfField",
    "InversionError", "Linear", "RegularityError", "RunConfig", "SegmentScheme", "SolutionPair", "StepConfig",
    "Trajectory", "UnsupportedOperationError", "builtin_system", "evolve", "make_discrete_system",
    "parse_config", "step",
]
