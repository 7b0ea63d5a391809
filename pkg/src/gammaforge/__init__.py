"""Gamma-calculus of diffusion operators: curvature, transformations, spectral checks."""

__version__ = "0.1.0"

from .expr import Expr, parse, diff, evaluate  # noqa: F401
from .diffusion import DiffusionOperator, RiemannianSpec  # noqa: F401
