"""
Optimizer Service - BFGS with Armijo backtracking

Shared by the synthesis inner loop and passivity enforcement. The objective
returns (value, gradient) from a single pass so evaluations are not repeated.
"""

import logging
from dataclasses import dataclass

import numpy as np

from phsynth.exceptions import FrequencyError

# Set up logging
logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
BACKTRACK_FACTOR = 0.5
MAX_BACKTRACKS = 60


@dataclass(frozen=True, eq=False)
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    nfev: int
    converged: bool
    degraded: bool
    message: str


def _armijo(fun, x, f, g, p, nfev):
    """Backtrack from a unit step until sufficient decrease; trial points that raise count as rejections."""
    slope = float(g @ p)
    step = 1.0
    for _ in range(MAX_BACKTRACKS):
        trial = x + step * p
        try:
            f_new, g_new = fun(trial)
            nfev += 1
        except FrequencyError as e:
            nfev += 1
            logger.debug(f"Line search trial rejected: {e}")
            f_new = np.inf
        if np.isfinite(f_new) and f_new <= f + ARMIJO_C1 * step * slope:
            return step, trial, f_new, g_new, nfev
        step *= BACKTRACK_FACTOR
    return None, x, f, g, nfev


def bfgs(fun, x0, gtol=1e-8, ftarget=None, maxiter=500):
    """
    Minimize fun by BFGS with an inverse-Hessian update.

    Args:
        fun (callable): x -> (value, gradient)
        x0 (array): starting point
        gtol (float): stop when ||g||_inf <= gtol * max(1, |f|)
        ftarget (float): stop as soon as f <= ftarget
        maxiter (int): iteration budget

    Returns:
        OptimizeResult: final iterate; `degraded` is set when the line search fails
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    nfev = 1
    n = x.size
    H = np.eye(n)
    scaled = False

    def _done(f, g):
        if ftarget is not None and f <= ftarget:
            return "target reached"
        if np.max(np.abs(g), initial=0.0) <= gtol * max(1.0, abs(f)):
            return "gradient small"
        return None

    reason = _done(f, g)
    k = 0
    while reason is None and k < maxiter:
        p = -H @ g
        if g @ p >= 0:
            H = np.eye(n)
            p = -g
        if not scaled:
            p = p / max(1.0, np.max(np.abs(p)))

        step, x_new, f_new, g_new, nfev = _armijo(fun, x, f, g, p, nfev)
        if step is None:
            logger.warning(f"BFGS line search failed at iteration {k}; f={f:.6e}")
            return OptimizeResult(x, f, g, k, nfev, converged=False, degraded=True, message="line search failed")

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = (sy / float(y @ y)) * np.eye(n)
                scaled = True
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho**2 * float(y @ Hy) + rho) * np.outer(s, s)

        x, f, g = x_new, f_new, g_new
        k += 1
        logger.debug(f"BFGS iter {k}: f={f:.6e}, |g|_inf={np.max(np.abs(g), initial=0.0):.3e}, step={step:.3g}")
        reason = _done(f, g)

    if reason is None:
        return OptimizeResult(x, f, g, k, nfev, converged=False, degraded=False, message="iteration budget exhausted")
    return OptimizeResult(x, f, g, k, nfev, converged=True, degraded=False, message=reason)
