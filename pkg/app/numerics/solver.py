import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

from app.errors import ConvergenceError

logger = logging.getLogger(__name__)


@dataclass
class SolverResult:
    x: np.ndarray
    converged: bool
    n_iter: int
    residual_norm: float
    method: str


def finite_difference_jacobian(F: Callable, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences, one column per coordinate."""
    x = np.asarray(x, dtype=float)
    columns = []
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        forward, backward = x.copy(), x.copy()
        forward[j] += h
        backward[j] -= h
        columns.append((np.asarray(F(forward)) - np.asarray(F(backward))) / (2.0 * h))
    return np.column_stack(columns)


def _sup(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.max(np.abs(values))) if np.all(np.isfinite(values)) else float("inf")


def _safe(F: Callable, x: np.ndarray) -> np.ndarray:
    try:
        return np.asarray(F(x), dtype=float)
    except (ArithmeticError, ValueError, FloatingPointError):
        return np.full(x.shape, np.inf)


def _damped_newton(F, x, tol, max_iter, jac):
    fx = _safe(F, x)
    for it in range(max_iter):
        if _sup(fx) <= tol:
            return x, fx, it, True
        J = jac(x) if jac is not None else finite_difference_jacobian(F, x)
        try:
            step = np.linalg.solve(J, -fx)
        except np.linalg.LinAlgError:
            logger.debug(f"newton: singular Jacobian at iteration {it}")
            return x, fx, it, False
        if not np.all(np.isfinite(step)):
            return x, fx, it, False
        norm = np.linalg.norm(fx)
        damping = 1.0
        for _ in range(30):
            candidate = x + damping * step
            fc = _safe(F, candidate)
            if np.all(np.isfinite(fc)) and np.linalg.norm(fc) < norm:
                break
            damping *= 0.5
        else:
            logger.debug(f"newton: line search stagnated at iteration {it}")
            return x, fx, it, False
        x, fx = candidate, fc
    return x, fx, max_iter, _sup(fx) <= tol


def solve_nonlinear_system(
    F: Callable,
    x0,
    tol: float = 1e-8,
    max_iter: int = 50,
    jac: Optional[Callable] = None,
) -> SolverResult:
    """Find x with sup-norm |F(x)| <= tol.

    Damped Newton with a finite-difference Jacobian (unless ``jac`` is given);
    on stagnation, MINPACK's hybrid trust-region method continues from the last
    Newton iterate. Deterministic for fixed (F, x0, tol).
    """
    x = np.array(x0, dtype=float)
    x, fx, n_iter, converged = _damped_newton(F, x, tol, max_iter, jac)
    if converged:
        return SolverResult(x, True, n_iter, _sup(fx), "newton")

    logger.debug(f"newton stopped at residual {_sup(fx):.3e}, switching to trust-region")
    start = x if np.all(np.isfinite(fx)) else np.array(x0, dtype=float)
    try:
        sol = optimize.root(F, start, method="hybr", jac=jac, options={"xtol": 1e-12, "maxfev": 200 * (start.size + 1)})
    except (ArithmeticError, ValueError) as e:
        raise ConvergenceError(f"trust-region solver failed: {e}", _sup(fx), n_iter)
    residual = _sup(_safe(F, sol.x))
    total = n_iter + int(sol.get("nfev", 0))
    if residual <= tol:
        return SolverResult(np.asarray(sol.x, dtype=float), True, total, residual, "hybr")
    raise ConvergenceError("no root found", min(residual, _sup(fx)), total)
