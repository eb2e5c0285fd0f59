"""
Passivity Service - Positive-realness certificates and passivation

This service is responsible for:
1. Popov-function sweeps
2. KYP feasibility by the positive-real Hamiltonian test
3. Controllability Gramian factors and KYP solutions
4. Minimal C-perturbation passivation of nonpassive controllers
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
from scipy.linalg import lapack

from phsynth.exceptions import (
    CertificateError,
    InfeasibleError,
    InstabilityError,
    PoleAtSampleError,
    StructuralError,
)
from phsynth.services.hinf_service import spectral_abscissa
from phsynth.services.lti_service import eval_transfer, normalize_grid
from phsynth.services.optimizer_service import bfgs
from phsynth.services.ph_core import StateSpace, statespace_to_ph, validate_ph_form
from phsynth.utils.linalg_utils import min_eig_sym, sym
from phsynth.utils.parallel import parallel_map

# Set up logging
logger = logging.getLogger(__name__)

IMAGINARY_POLE_TOL = 1e-8
HAMILTONIAN_AXIS_TOL = 1e-8
DENSE_SWEEP = np.concatenate([[0.0], np.logspace(-6, 6, 10000)])


def passivity_tolerance(D):
    """tau_pass = 1e-8 * max(1, ||D + D^T||_2)."""
    if D.size == 0:
        return 1e-8
    return 1e-8 * max(1.0, np.linalg.norm(D + D.T, 2))


@dataclass(frozen=True)
class PassivityCertificate:
    passive: bool
    min_popov_eig: float
    witness_omega: Optional[float]
    kyp_feasible: bool
    method: str
    status: str
    message: str = ""

    def to_dict(self):
        return {
            "passive": self.passive,
            "status": self.status,
            "min_popov_eig": self.min_popov_eig,
            "witness_omega": self.witness_omega,
            "kyp_feasible": self.kyp_feasible,
            "method": self.method,
            "message": self.message,
        }


@dataclass(frozen=True, eq=False)
class PopovTable:
    """Ascending eigenvalues of the Popov function per frequency."""

    omegas: np.ndarray
    values: np.ndarray

    def min_curve(self):
        return self.values[:, 0]


def _check_square(K_ss):
    if K_ss.n_inputs != K_ss.n_outputs:
        raise StructuralError(
            f"Passivity needs a square system, got {K_ss.n_outputs} outputs and {K_ss.n_inputs} inputs"
        )


def popov_matrix(K_ss, omega):
    Ks = eval_transfer(K_ss, 1j * omega)
    return Ks + Ks.conj().T


def popov_sweep(K_ss, grid, threads=1):
    """Eigenvalues of K(i omega)^H + K(i omega) on each grid point, ascending."""
    _check_square(K_ss)
    grid = np.asarray(grid, dtype=float).ravel()
    if grid.size == 0:
        raise ValueError("popov_sweep needs a nonempty grid")
    rows = parallel_map(lambda omega: np.linalg.eigvalsh(popov_matrix(K_ss, omega)), grid, threads)
    return PopovTable(omegas=grid, values=np.vstack(rows))


def _min_popov(K_ss, omegas):
    """Smallest Popov eigenvalue over `omegas`, skipping poles; returns (value, omega)."""
    best, where = np.inf, None
    for omega in omegas:
        try:
            value = float(np.linalg.eigvalsh(popov_matrix(K_ss, omega))[0])
        except PoleAtSampleError:
            continue
        if value < best:
            best, where = value, float(omega)
    return best, where


def _imaginary_pole_residues(K_ss):
    """
    Residues of K at poles on the imaginary axis, grouped by pole location.

    Returns None when the eigenvector basis is too ill-conditioned to trust.
    """
    lam, left, right = la.eig(K_ss.A, left=True, right=True)
    on_axis = np.abs(lam.real) <= IMAGINARY_POLE_TOL
    if not np.any(on_axis):
        return []
    if np.linalg.cond(right) > 1e12:
        return None
    residues = {}
    for i in np.flatnonzero(on_axis):
        v, w = right[:, i], left[:, i]
        scale = w.conj() @ v
        contribution = np.outer(K_ss.C @ v, w.conj() @ K_ss.B) / scale
        key = round(float(lam[i].imag), 8)
        residues[key] = residues.get(key, 0) + contribution
    return list(residues.items())


def _certificate(passive, min_eig, witness, kyp, method, status=None, message=""):
    if status is None:
        status = "passive" if passive else "nonpassive"
    return PassivityCertificate(
        passive=bool(passive),
        min_popov_eig=float(min_eig),
        witness_omega=witness,
        kyp_feasible=bool(kyp),
        method=method,
        status=status,
        message=message,
    )


def _hamiltonian_crossings(K_ss, R0):
    A, B, C = K_ss.A, K_ss.B, K_ss.C
    BR = la.solve(R0, B.T).T
    Ar = A - BR @ C
    H = np.block([[Ar, -BR @ B.T], [C.T @ la.solve(R0, C), -Ar.T]])
    eigs = la.eigvals(H)
    if not np.all(np.isfinite(eigs)):
        return None
    tol = HAMILTONIAN_AXIS_TOL * max(1.0, np.linalg.norm(H, 1))
    return np.unique(np.abs(eigs[np.abs(eigs.real) <= tol].imag))


def kyp_check(K_ss, tol=None):
    """
    Decide passivity of a square realization.

    D + D^T is checked first. Nonsingular D + D^T goes through the
    positive-real Hamiltonian: no imaginary-axis eigenvalues means the Popov
    function never loses rank, hence stays positive definite. Crossings are
    classified by evaluating the Popov function between them. Singular
    D + D^T falls back to a dense Popov sweep.

    Args:
        K_ss (StateSpace): square system
        tol (float): passivity tolerance tau_pass; defaults to passivity_tolerance(D)

    Returns:
        PassivityCertificate
    """
    _check_square(K_ss)
    tau = passivity_tolerance(K_ss.D) if tol is None else tol
    Dsym = K_ss.D + K_ss.D.T
    d_min = min_eig_sym(Dsym) if Dsym.size else np.inf

    if d_min < -tau:
        return _certificate(False, d_min, float("inf"), False, "hamiltonian-test", message="D + D^T is indefinite")
    if K_ss.n_states == 0:
        return _certificate(True, d_min, None, True, "hamiltonian-test")

    abscissa = spectral_abscissa(K_ss.A)
    if abscissa > IMAGINARY_POLE_TOL:
        return _certificate(False, d_min, None, False, "hamiltonian-test", message=f"unstable: abscissa {abscissa:.3e}")

    if abscissa >= -IMAGINARY_POLE_TOL:
        residues = _imaginary_pole_residues(K_ss)
        if residues is None:
            return _certificate(
                False, np.nan, None, False, "popov-sweep", status="indeterminate",
                message="defective imaginary-axis poles",
            )
        for pole, residue in residues:
            scale = max(1.0, np.linalg.norm(residue))
            hermitian = np.linalg.norm(residue - residue.conj().T) <= 1e-8 * scale
            if not hermitian or np.linalg.eigvalsh(0.5 * (residue + residue.conj().T))[0] < -1e-8 * scale:
                return _certificate(
                    False, -np.inf, pole, False, "popov-sweep", message=f"residue at omega={pole:.6g} is not psd"
                )
        min_eig, witness = _min_popov(K_ss, DENSE_SWEEP)
        return _certificate(min_eig >= -tau, min_eig, witness, min_eig >= -tau, "popov-sweep")

    if d_min <= tau:
        min_eig, witness = _min_popov(K_ss, DENSE_SWEEP)
        min_eig = min(min_eig, d_min)
        return _certificate(min_eig >= -tau, min_eig, witness, min_eig >= -tau, "popov-sweep")

    crossings = _hamiltonian_crossings(K_ss, Dsym)
    if crossings is None:
        return _certificate(
            False, np.nan, None, False, "hamiltonian-test", status="indeterminate",
            message="Hamiltonian eigenvalues are not finite",
        )
    if crossings.size == 0:
        min_eig, witness = _min_popov(K_ss, np.concatenate([[0.0], np.logspace(-4, 4, 200)]))
        return _certificate(True, min(min_eig, d_min), witness, True, "hamiltonian-test")

    trial_omegas = np.concatenate([[0.0], crossings, (crossings[1:] + crossings[:-1]) / 2, [2.0 * crossings[-1]]])
    min_eig, witness = _min_popov(K_ss, trial_omegas)
    passive = min_eig >= -tau
    return _certificate(passive, min_eig, witness, passive, "hamiltonian-test")


def controllability_gramian_cholesky(K_ss):
    """
    Factor L_c with A P_c + P_c A^T + B B^T = 0 and P_c = L_c L_c^T.

    Positive definite Gramians give the Cholesky factor. Semidefinite ones
    (unreachable directions) use pivoted Cholesky, so L_c is then lower
    triangular only up to the symmetric permutation.

    Raises:
        InstabilityError: A is not asymptotically stable
    """
    A, B = K_ss.A, K_ss.B
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    abscissa = spectral_abscissa(A)
    if abscissa >= 0:
        raise InstabilityError(f"Gramian undefined: spectral abscissa {abscissa:.3e} >= 0")

    BBt = B @ B.T
    P = sym(la.solve_continuous_lyapunov(A, -BBt))
    residual = np.linalg.norm(A @ P + P @ A.T + BBt, "fro")
    if residual > 1e-10 * max(np.linalg.norm(BBt, "fro"), np.finfo(float).tiny):
        logger.warning(f"Lyapunov residual {residual:.3e} is large relative to ||BB^T||")

    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        logger.info("Controllability Gramian is singular; using pivoted Cholesky")

    lam, vecs = np.linalg.eigh(P)
    P = (vecs * np.clip(lam, 0.0, None)) @ vecs.T
    c, piv, rank, _ = lapack.dpstrf(P, lower=1, tol=-1.0)
    L = np.tril(c)
    L[:, rank:] = 0.0
    factor = np.zeros_like(L)
    factor[piv - 1] = L
    return factor


def kyp_solution(K_ss):
    """
    Stabilizing solution X of the positive-real Riccati equation

        A^T X + X A + (X B - C^T)(D + D^T)^{-1}(B^T X - C) = 0.

    Raises:
        CertificateError: D + D^T is not positive definite, the Riccati
            solver fails, or the solution is not positive definite
    """
    _check_square(K_ss)
    R0 = K_ss.D + K_ss.D.T
    if R0.size and min_eig_sym(R0) <= passivity_tolerance(K_ss.D):
        raise CertificateError("kyp_solution needs D + D^T > 0")
    n = K_ss.n_states
    try:
        X = la.solve_continuous_are(K_ss.A, K_ss.B, np.zeros((n, n)), -R0, s=-K_ss.C.T)
    except (la.LinAlgError, ValueError) as e:
        raise CertificateError(f"Positive-real Riccati equation has no stabilizing solution: {e}") from e
    X = sym(X)
    if min_eig_sym(X) <= 0:
        raise CertificateError("Riccati solution is not positive definite; realization is not minimal")
    return X


def controller_to_ph(K_ss, tol=None):
    """pH realization of a passive, minimal controller via its KYP solution."""
    ph = statespace_to_ph(K_ss, kyp_solution(K_ss))
    report = validate_ph_form(ph, tol)
    if not report.passed:
        raise CertificateError(f"Converted controller violates: {', '.join(report.failed_names())}")
    return ph


@dataclass(frozen=True)
class PassivationConfig:
    rho0: float = 1.0
    rho_growth: float = 10.0
    rho_max: float = 1e10
    margin: Optional[float] = None
    max_iter: int = 200
    refine_points: int = 5
    threads: int = 1


@dataclass(frozen=True, eq=False)
class PassivationResult:
    controller: StateSpace
    perturbation_norm: float
    perturbation: np.ndarray
    certificate: PassivityCertificate
    rho: float
    grid: np.ndarray = field(repr=False)

    def __iter__(self):
        yield self.controller
        yield self.perturbation_norm


class _PopovPenalty:
    """||Xi||_F^2 + rho * sum ([delta - lambda_j(Phi_Xi(i omega))]_+)^2 over a fixed grid."""

    def __init__(self, K_ss, Lc, grid, margin):
        self.m, self.n = K_ss.n_outputs, K_ss.n_states
        self.margin = margin
        self.rho = 1.0
        self.reset_grid(K_ss, Lc, grid)

    def reset_grid(self, K_ss, Lc, grid):
        self.grid = grid
        T = np.stack([la.solve(1j * w * np.eye(self.n) - K_ss.A, K_ss.B) for w in grid])
        self.K0 = K_ss.C @ T + K_ss.D
        self.LcT = Lc @ T

    def popov_eigs(self, Xi):
        K = self.K0 + Xi @ self.LcT
        return np.linalg.eigh(K + np.conj(np.swapaxes(K, 1, 2)))

    def __call__(self, xi):
        Xi = xi.reshape(self.m, self.n)
        lam, V = self.popov_eigs(Xi)
        active = np.clip(self.margin - lam, 0.0, None)
        value = float(np.sum(Xi * Xi) + self.rho * np.sum(active**2))
        MV = self.LcT @ V
        grad_lam = 2.0 * np.real(np.einsum("ij,iaj,ibj->ab", active, np.conj(V), MV))
        grad = 2.0 * Xi - 2.0 * self.rho * grad_lam
        return value, grad.ravel()


def _refine_near_minima(grid, min_curve, points):
    """Log-spaced points around every local minimum of the Popov curve."""
    extra = []
    for i in range(grid.size):
        left = min_curve[i - 1] if i > 0 else np.inf
        right = min_curve[i + 1] if i + 1 < grid.size else np.inf
        if min_curve[i] <= left and min_curve[i] <= right:
            lo = grid[i - 1] if i > 0 else grid[i] / 2
            hi = grid[i + 1] if i + 1 < grid.size else grid[i] * 2
            lo = max(lo, 1e-12)
            extra.append(np.logspace(np.log10(lo), np.log10(hi), points))
    if not extra:
        return grid
    return normalize_grid(np.concatenate([grid] + extra))


def passivity_enforce(K_ss, grid, config=None):
    """
    Minimal Frobenius-norm perturbation C~ = C + Xi L_c that makes K passive.

    A quadratic penalty on negative Popov eigenvalues is minimized by BFGS;
    the penalty weight grows and the grid is refined near Popov minima until
    kyp_check certifies the perturbed controller.

    Args:
        K_ss (StateSpace): square, stable controller
        grid (array): initial frequency grid
        config (PassivationConfig): penalty schedule

    Returns:
        PassivationResult: unpacks as (controller, perturbation_norm)

    Raises:
        InfeasibleError: D + D^T has a negative eigenvalue, or the schedule ends uncertified
        InstabilityError: A is not asymptotically stable
    """
    config = config or PassivationConfig()
    _check_square(K_ss)
    grid = normalize_grid(grid)

    certificate = kyp_check(K_ss)
    if certificate.passive:
        logger.info("Controller is already passive; no perturbation needed")
        Xi = np.zeros((K_ss.n_outputs, K_ss.n_states))
        return PassivationResult(K_ss, 0.0, Xi, certificate, 0.0, grid)

    tau = passivity_tolerance(K_ss.D)
    Dsym = K_ss.D + K_ss.D.T
    if min_eig_sym(Dsym) < -tau:
        raise InfeasibleError("D + D^T is indefinite; perturbing C alone cannot restore passivity")

    Lc = controllability_gramian_cholesky(K_ss)
    margin = config.margin if config.margin is not None else 1e-6 * max(1.0, np.linalg.norm(Dsym, 2))
    penalty = _PopovPenalty(K_ss, Lc, grid, margin)
    Xi = np.zeros((K_ss.n_outputs, K_ss.n_states))
    rho = config.rho0

    while rho <= config.rho_max:
        penalty.rho = rho
        result = bfgs(penalty, Xi.ravel(), maxiter=config.max_iter)
        Xi = result.x.reshape(Xi.shape)
        perturbed = StateSpace(K_ss.A, K_ss.B, K_ss.C + Xi @ Lc, K_ss.D)

        certificate = kyp_check(perturbed)
        logger.info(
            f"Passivation rho={rho:.1e}: ||Xi||_F={np.linalg.norm(Xi):.6g}, "
            f"min Popov eig={certificate.min_popov_eig:.3e}, grid={grid.size}"
        )
        if certificate.passive:
            return PassivationResult(perturbed, float(np.linalg.norm(Xi)), Xi, certificate, rho, grid)

        lam, _ = penalty.popov_eigs(Xi)
        grid = _refine_near_minima(grid, lam[:, 0], config.refine_points)
        if certificate.witness_omega is not None and np.isfinite(certificate.witness_omega):
            grid = normalize_grid(np.append(grid, certificate.witness_omega))
        penalty.reset_grid(K_ss, Lc, grid)
        rho *= config.rho_growth

    raise InfeasibleError(f"Passivation not certified up to rho={config.rho_max:.1e}")
