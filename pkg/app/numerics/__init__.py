from app.numerics.quadrature import QuadratureRule, default_rule, integrate_over_y, outcome_nodes
from app.numerics.rng import rng_stream
from app.numerics.solver import SolverResult, solve_nonlinear_system
from app.numerics.splines import SplineBasis, SplineFit, fit_spline_mean

__all__ = [
    "QuadratureRule",
    "SolverResult",
    "SplineBasis",
    "SplineFit",
    "default_rule",
    "fit_spline_mean",
    "integrate_over_y",
    "outcome_nodes",
    "rng_stream",
    "solve_nonlinear_system",
]
