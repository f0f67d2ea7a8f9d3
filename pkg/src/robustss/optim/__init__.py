"""Optimization backends: LP with certificates, log-barrier, certified concave maximization, PWL models."""

from .barrier import BarrierError, BarrierResult, barrier_maximize, newton_maximize
from .concave import ConcaveResult, IterationCapExceeded, Polytope, cut_bound, maximize_concave, minimize_convex
from .lp import LinearProgram, LPError, LPResult, check_certificate, format_lp, solve_lp
from .pwl import PwlUtilityModel, build_pwl_model

__all__ = [
    "BarrierError",
    "BarrierResult",
    "barrier_maximize",
    "newton_maximize",
    "ConcaveResult",
    "IterationCapExceeded",
    "Polytope",
    "cut_bound",
    "maximize_concave",
    "minimize_convex",
    "LinearProgram",
    "LPError",
    "LPResult",
    "check_certificate",
    "format_lp",
    "solve_lp",
    "PwlUtilityModel",
    "build_pwl_model",
]
