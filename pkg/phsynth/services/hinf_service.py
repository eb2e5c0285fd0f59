"""
H-infinity Service - Norm computation and singular-value sweeps

This service is responsible for:
1. Computing the H-infinity norm of stable closed loops (validation oracle)
2. Singular-value sweeps over frequency grids
3. Spectral abscissa for stability reporting
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from phsynth.exceptions import InstabilityError
from phsynth.services.ph_core import StateSpace
from phsynth.services.lti_service import eval_transfer
from phsynth.utils.parallel import parallel_map

# Set up logging
logger = logging.getLogger(__name__)

# Real parts below this (relative to the Hamiltonian's 1-norm) count as imaginary-axis eigenvalues
IMAGINARY_AXIS_TOL = 1e-8
MAX_BISECTION_STEPS = 100


@dataclass(frozen=True)
class HinfResult:
    norm: float
    peak_omega: float
    iterations: int
    converged: bool

    def to_dict(self):
        return {
            "hinf_norm": self.norm,
            "peak_omega": self.peak_omega,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass(frozen=True, eq=False)
class SigmaTable:
    """Singular values per frequency, each row descending."""

    omegas: np.ndarray
    values: np.ndarray

    def max_curve(self):
        if self.values.shape[1] == 0:
            return np.zeros(self.omegas.size)
        return self.values[:, 0]

    def peak(self):
        curve = self.max_curve()
        i = int(np.argmax(curve))
        return float(curve[i]), float(self.omegas[i])


def spectral_abscissa(A):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return -np.inf
    return float(np.max(la.eigvals(A).real))


def _evaluator(system):
    if isinstance(system, StateSpace):
        return lambda omega: eval_transfer(system, 1j * omega)
    return system.evaluate


def sigma_sweep(system, grid, threads=1):
    """
    Full singular-value vector of the system at each grid frequency.

    Args:
        system: StateSpace, or any object with evaluate(omega) -> complex matrix
        grid (array): frequencies in rad/s
        threads (int): worker threads for the sweep

    Returns:
        SigmaTable: rows aligned with `grid`
    """
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("sigma_sweep needs a nonempty grid")
    evaluate = _evaluator(system)

    def _sigma(omega):
        return np.linalg.svd(np.atleast_2d(evaluate(omega)), compute_uv=False)

    rows = parallel_map(_sigma, grid, threads)
    return SigmaTable(omegas=grid, values=np.vstack(rows))


def grid_hinf_bound(system, grid, threads=1):
    """Largest sampled singular value; a lower bound only, so never marked converged."""
    table = sigma_sweep(system, grid, threads)
    norm, peak = table.peak()
    return HinfResult(norm=norm, peak_omega=peak, iterations=int(grid.size if hasattr(grid, "size") else len(grid)), converged=False)


def _sigma_max(ss, omega):
    return float(np.linalg.norm(eval_transfer(ss, 1j * omega), 2))


def _initial_lower_bound(ss):
    """Best of sigma_max(D), the DC gain and the gain at the least damped pole frequency."""
    candidates = [(float(np.linalg.norm(ss.D, 2)) if ss.D.size else 0.0, np.inf)]
    poles = la.eigvals(ss.A)
    omegas = [0.0]
    if np.any(poles.imag != 0):
        damping = np.abs(poles.imag / poles.real / np.abs(poles))
        omegas.append(float(np.abs(poles[np.argmax(damping)])))
    else:
        omegas.append(float(np.min(np.abs(poles))))
    for omega in omegas:
        candidates.append((_sigma_max(ss, omega), omega))
    return max(candidates, key=lambda c: c[0])


def _crossings(ss, gamma):
    """Imaginary-axis eigenvalue frequencies of the Hamiltonian at level gamma."""
    A, B, C, D = ss.A, ss.B, ss.C, ss.D
    R = D.T @ D - gamma**2 * np.eye(D.shape[1])
    S = D @ D.T - gamma**2 * np.eye(D.shape[0])
    Ar = A - B @ la.solve(R, D.T @ C)
    H = np.block(
        [
            [Ar, -gamma * B @ la.solve(R, B.T)],
            [gamma * C.T @ la.solve(S, C), -Ar.T],
        ]
    )
    eigs = la.eigvals(H)
    tol = IMAGINARY_AXIS_TOL * max(1.0, np.linalg.norm(H, 1))
    on_axis = eigs[np.abs(eigs.real) <= tol]
    return np.unique(np.abs(on_axis.imag))


def hinf_norm(ss, rel_tol=1e-6):
    """
    H-infinity norm by Hamiltonian bisection with two-level refinement.

    The returned norm is an attained sigma_max, and the Hamiltonian at
    norm*(1+rel_tol) has no imaginary-axis eigenvalues, so the true norm lies
    in [norm, norm*(1+rel_tol)].

    Raises:
        InstabilityError: spectral abscissa of A is not negative
    """
    abscissa = spectral_abscissa(ss.A)
    if abscissa >= 0:
        raise InstabilityError(f"H-infinity norm undefined: spectral abscissa {abscissa:.3e} >= 0")

    if ss.n_states == 0 or not np.any(ss.B) or not np.any(ss.C):
        gain = float(np.linalg.norm(ss.D, 2)) if ss.D.size else 0.0
        return HinfResult(norm=gain, peak_omega=np.inf if ss.n_states else 0.0, iterations=0, converged=True)

    lb, peak = _initial_lower_bound(ss)
    if lb == 0.0:
        scan = np.logspace(-4, 4, 81)
        values = [_sigma_max(ss, w) for w in scan]
        i = int(np.argmax(values))
        lb, peak = values[i], float(scan[i])
        if lb == 0.0:
            return HinfResult(norm=0.0, peak_omega=0.0, iterations=0, converged=True)

    for iteration in range(1, MAX_BISECTION_STEPS + 1):
        gamma = lb * (1 + rel_tol)
        crossings = _crossings(ss, gamma)
        if crossings.size == 0:
            logger.debug(f"hinf_norm converged after {iteration} steps: {lb:.10g} at omega={peak:.6g}")
            return HinfResult(norm=lb, peak_omega=peak, iterations=iteration, converged=True)

        trial_omegas = np.concatenate([crossings, (crossings[1:] + crossings[:-1]) / 2])
        values = [_sigma_max(ss, w) for w in trial_omegas]
        i = int(np.argmax(values))
        if values[i] <= lb:
            # crossings came from round-off near the axis
            logger.debug(f"hinf_norm stalled at {lb:.10g}; accepting")
            return HinfResult(norm=lb, peak_omega=peak, iterations=iteration, converged=True)
        lb, peak = values[i], float(trial_omegas[i])

    logger.warning(f"hinf_norm did not converge in {MAX_BISECTION_STEPS} steps; returning lower bound {lb:.6g}")
    return HinfResult(norm=lb, peak_omega=peak, iterations=MAX_BISECTION_STEPS, converged=False)
