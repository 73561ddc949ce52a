"""Quantile-filtered randomized Kaczmarz solvers for t-product tensor systems."""
from .errors import ConfigError, DomainError, NumericalError, ShapeError, SingularRowError
from .solvers import RunRecord, SolverConfig, Variant, least_norm_solve, solve
from .tensor_core import tprod

__all__ = [
    "ConfigError",
    "DomainError",
    "NumericalError",
    "RunRecord",
    "ShapeError",
    "SingularRowError",
    "SolverConfig",
    "Variant",
    "least_norm_solve",
    "solve",
    "tprod",
]
