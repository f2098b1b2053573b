"""Nonlinear least squares by Gauss-Newton with a numeric Jacobian and Armijo backtracking."""
from typing import Callable, Dict, NamedTuple

import numpy as np

Residuals = Callable[[np.ndarray], np.ndarray]


class GaussNewtonResult(NamedTuple):
    x: np.ndarray
    sse: float
    iterations: int
    converged: bool
    rank_deficient: bool


def numeric_jacobian(residuals: Residuals, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, one column per parameter."""
    base = residuals(x)
    jacobian = np.empty((base.size, x.size))
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        forward, backward = x.copy(), x.copy()
        forward[k] += h
        backward[k] -= h
        jacobian[:, k] = (residuals(forward) - residuals(backward)) / (2.0 * h)
    return jacobian


def gauss_newton(residuals: Residuals, x0: np.ndarray, max_iter: int = 200, gtol: float = 1e-10,
                 ftol: float = 1e-14, c1: float = 1e-4, step_min: float = 1e-12) -> GaussNewtonResult:
    """
    Minimize sum(residuals(x)**2).

    Args:
        residuals: vector of residuals as a function of the parameters
        x0: starting point
        max_iter: iteration cap
        gtol: stop when the gradient norm falls below this
        ftol: stop when the relative decrease of the objective falls below this
        c1: Armijo sufficient-decrease constant
        step_min: smallest backtracking step before giving up

    Returns:
        GaussNewtonResult: the final point; rank_deficient is set (and iteration stops)
        when the Jacobian loses column rank
    """
    x = np.array(x0, dtype=np.float64)
    r = residuals(x)
    f = float(r @ r)
    for iteration in range(1, max_iter + 1):
        if not np.isfinite(f):
            return GaussNewtonResult(x, f, iteration, False, False)
        jacobian = numeric_jacobian(residuals, x)
        direction, _, rank, _ = np.linalg.lstsq(jacobian, -r, rcond=None)
        if rank < x.size:
            return GaussNewtonResult(x, f, iteration, False, True)
        gradient = 2.0 * jacobian.T @ r
        if np.linalg.norm(gradient) <= gtol:
            return GaussNewtonResult(x, f, iteration, True, False)

        alpha = 1.0
        while True:
            candidate = x + alpha * direction
            r_new = residuals(candidate)
            f_new = float(r_new @ r_new)
            if np.isfinite(f_new) and f_new <= f + c1 * alpha * float(gradient @ direction):
                break
            alpha *= 0.5
            if alpha < step_min:
                return GaussNewtonResult(x, f, iteration, True, False)

        decrease = f - f_new
        x, r, f = candidate, r_new, f_new
        if decrease <= ftol * max(f, 1e-300):
            return GaussNewtonResult(x, f, iteration, True, False)
    return GaussNewtonResult(x, f, max_iter, False, False)


def r_squared(observed: np.ndarray, sse: float) -> float:
    total = float(np.sum((observed - observed.mean()) ** 2))
    return 1.0 - sse / total if total > 0 else float("nan")


def describe(result: GaussNewtonResult) -> Dict[str, float]:
    return {
        "sse": result.sse,
        "iterations": result.iterations,
        "converged": result.converged,
        "rank_deficient": result.rank_deficient,
    }
