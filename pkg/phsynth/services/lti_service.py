"""
LTI Service - Frequency-domain evaluation and feedback interconnections

This service is responsible for:
1. Evaluating transfer functions and plant blocks on the imaginary axis
2. Caching plant evaluations across optimizer iterations
3. Assembling closed loops (LFT, closed-loop matrix, dissipative pencil)
4. Simulating trajectories for dissipation checks
"""

import enum
import logging
import threading
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from phsynth.exceptions import IllPosedError, MissingSampleError, PoleAtSampleError, StructuralError
from phsynth.services.ph_core import (
    PHForm,
    PHPlant,
    PlantStateSpace,
    StateSpace,
    hamiltonian_value,
    ph_to_statespace,
    plant_statespace,
)
from phsynth.utils.parallel import parallel_map

# Set up logging
logger = logging.getLogger(__name__)

# Relative singular-value floor below which an interconnection is ill-posed
WELLPOSED_RTOL = 1e-14


class FeedbackSign(enum.Enum):
    """Sign applied to the controller output: u = sign * y_K."""

    POSITIVE = 1
    NEGATIVE = -1

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls[str(value).upper()]


def make_grid(omega_min, omega_max, count):
    """Log-spaced frequency grid in rad/s."""
    if not 0 < omega_min < omega_max:
        raise ValueError(f"Need 0 < omega_min < omega_max, got [{omega_min}, {omega_max}]")
    if count < 1:
        raise ValueError("Grid needs at least one point")
    return np.logspace(np.log10(omega_min), np.log10(omega_max), int(count))


def normalize_grid(omegas, rel_gap=1e-12):
    """Sort ascending and drop points closer than `rel_gap` (relative) to their predecessor."""
    omegas = np.sort(np.asarray(omegas, dtype=float).ravel())
    if omegas.size == 0:
        return omegas
    if not np.all(np.isfinite(omegas)):
        raise ValueError("Frequency points must be finite")
    keep = [0]
    for i in range(1, omegas.size):
        prev = omegas[keep[-1]]
        if abs(omegas[i] - prev) > rel_gap * max(abs(omegas[i]), abs(prev), 1e-300):
            keep.append(i)
    return omegas[keep]


@dataclass(frozen=True, eq=False)
class PlantEvaluation:
    omega: float
    P11: np.ndarray
    P12: np.ndarray
    P21: np.ndarray
    P22: np.ndarray


@dataclass(frozen=True, eq=False)
class PlantEvaluationBatch:
    """Plant blocks stacked along a leading sample axis."""

    omegas: np.ndarray
    P11: np.ndarray
    P12: np.ndarray
    P21: np.ndarray
    P22: np.ndarray

    @classmethod
    def from_evaluations(cls, evaluations):
        return cls(
            omegas=np.array([pe.omega for pe in evaluations]),
            P11=np.stack([pe.P11 for pe in evaluations]),
            P12=np.stack([pe.P12 for pe in evaluations]),
            P21=np.stack([pe.P21 for pe in evaluations]),
            P22=np.stack([pe.P22 for pe in evaluations]),
        )


def _factor_resolvent(A, s):
    n = A.shape[0]
    M = s * np.eye(n) - A
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(M, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.max() == 0.0 or pivots.min() <= np.finfo(float).eps * n * pivots.max():
        raise PoleAtSampleError("sI - A is singular", s=s)
    return lu, piv


def eval_transfer(ss, s):
    """C (sI - A)^{-1} B + D by one LU factorization of sI - A."""
    s = complex(s)
    if ss.n_states == 0:
        return ss.D.astype(complex)
    lu_piv = _factor_resolvent(ss.A, s)
    X = la.lu_solve(lu_piv, ss.B.astype(complex), check_finite=False)
    return ss.C @ X + ss.D


def _partitioned(plant):
    if isinstance(plant, PlantStateSpace):
        return plant
    if isinstance(plant, PHPlant):
        return plant_statespace(plant)
    raise StructuralError(f"Expected PHPlant or PlantStateSpace, got {type(plant).__name__}")


def eval_plant(plant, s):
    """All four plant blocks at s, sharing a single factorization of sI - A."""
    P = _partitioned(plant)
    s = complex(s)
    m1 = P.B1.shape[1]
    lu_piv = _factor_resolvent(P.A, s)
    X = la.lu_solve(lu_piv, np.hstack([P.B1, P.B2]).astype(complex), check_finite=False)
    X1, X2 = X[:, :m1], X[:, m1:]
    return PlantEvaluation(
        omega=s.imag,
        P11=P.C1 @ X1 + P.D11,
        P12=P.C1 @ X2 + P.D12,
        P21=P.C2 @ X1 + P.D21,
        P22=P.C2 @ X2 + P.D22,
    )


class PlantEvaluator:
    """Cached plant evaluations keyed by omega; safe under concurrent use."""

    def __init__(self, plant, threads=1):
        self.plant = _partitioned(plant)
        self.threads = threads
        self._cache = {}
        self._lock = threading.RLock()
        self.factorizations = 0

    @property
    def dims(self):
        P = self.plant
        return P.B1.shape[1], P.C1.shape[0], P.B2.shape[1], P.C2.shape[0]

    def evaluate(self, omega):
        key = float(omega)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        pe = eval_plant(self.plant, 1j * key)
        with self._lock:
            self.factorizations += 1
            return self._cache.setdefault(key, pe)

    def evaluate_many(self, omegas):
        return PlantEvaluationBatch.from_evaluations(parallel_map(self.evaluate, list(omegas), self.threads))

    def audit_grid(self, omega_min, omega_max, count):
        return make_grid(omega_min, omega_max, count)

    def cache_size(self):
        with self._lock:
            return len(self._cache)


@dataclass(frozen=True, eq=False)
class SampledPlant:
    """
    Plant known only through transfer-function samples.

    Lookups are exact: a frequency missing from the file is an error, never
    interpolated from its neighbours.
    """

    omegas: np.ndarray
    P11: np.ndarray
    P12: np.ndarray
    P21: np.ndarray
    P22: np.ndarray

    def __post_init__(self):
        omegas = np.asarray(self.omegas, dtype=float).ravel()
        order = np.argsort(omegas)
        object.__setattr__(self, "omegas", omegas[order])
        for name in ("P11", "P12", "P21", "P22"):
            block = np.asarray(getattr(self, name), dtype=complex)
            if block.ndim != 3 or block.shape[0] != omegas.size:
                raise StructuralError(f"{name} must be stacked as (samples, rows, cols)")
            object.__setattr__(self, name, block[order])
        if np.any(np.diff(self.omegas) <= 0):
            raise StructuralError("Sampled plant frequencies must be distinct")
        Ns, p1, m1 = self.P11.shape
        m, p2 = self.P12.shape[2], self.P21.shape[1]
        expected = {"P12": (Ns, p1, m), "P21": (Ns, p2, m1), "P22": (Ns, p2, m)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise StructuralError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        object.__setattr__(self, "_index", {float(w): i for i, w in enumerate(self.omegas)})

    @property
    def dims(self):
        return self.P11.shape[2], self.P11.shape[1], self.P12.shape[2], self.P21.shape[1]

    @property
    def factorizations(self):
        return 0

    def evaluate(self, omega):
        i = self._index.get(float(omega))
        if i is None:
            raise MissingSampleError("Sampled plant has no data at this frequency", s=1j * float(omega))
        return PlantEvaluation(float(self.omegas[i]), self.P11[i], self.P12[i], self.P21[i], self.P22[i])

    def evaluate_many(self, omegas):
        return PlantEvaluationBatch.from_evaluations([self.evaluate(w) for w in omegas])

    def audit_grid(self, omega_min, omega_max, count=None):
        """The file's own frequencies inside [omega_min, omega_max]; `count` is ignored."""
        mask = (self.omegas >= omega_min) & (self.omegas <= omega_max)
        return self.omegas[mask]


def as_plant_source(plant, threads=1):
    if isinstance(plant, (PlantEvaluator, SampledPlant)):
        return plant
    return PlantEvaluator(plant, threads=threads)


def _check_wellposed(M, s=None):
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size and sv[-1] <= WELLPOSED_RTOL * max(1.0, sv[0]):
        raise IllPosedError("Feedback interconnection is ill-posed", s=s)


def lower_lft(pe, Ks, sign=FeedbackSign.NEGATIVE):
    """P11 + sigma P12 K (I - sigma P22 K)^{-1} P21 at one frequency."""
    sigma = FeedbackSign.parse(sign).value
    K = np.atleast_2d(np.asarray(Ks, dtype=complex))
    if K.shape != (pe.P12.shape[1], pe.P22.shape[0]):
        raise StructuralError(f"Controller evaluation has shape {K.shape}, expected {(pe.P12.shape[1], pe.P22.shape[0])}")
    M = np.eye(pe.P22.shape[0]) - sigma * pe.P22 @ K
    _check_wellposed(M, 1j * pe.omega)
    return pe.P11 + sigma * pe.P12 @ K @ np.linalg.solve(M, pe.P21)


def _interconnect(plant, ctrl_ss, sign):
    P = _partitioned(plant)
    sigma = FeedbackSign.parse(sign).value
    m, p2 = P.B2.shape[1], P.C2.shape[0]
    if ctrl_ss.n_inputs != p2 or ctrl_ss.n_outputs != m:
        raise StructuralError(
            f"Controller is {ctrl_ss.n_outputs}x{ctrl_ss.n_inputs}, plant needs {m}x{p2}"
        )
    L = np.block([[np.eye(m), -sigma * ctrl_ss.D], [-P.D22, np.eye(p2)]])
    _check_wellposed(L)
    n, k = P.n_states, ctrl_ss.n_states
    rhs = np.block([[np.zeros((m, n)), sigma * ctrl_ss.C], [P.C2, np.zeros((p2, k))]])
    return P, sigma, L, np.linalg.solve(L, rhs)


def closed_loop_matrix(plant, ctrl_ss, sign=FeedbackSign.NEGATIVE):
    """
    Closed-loop system matrix diag(A, A_K) + diag(B2, B_K) L^{-1} [[0, sigma C_K], [C2, 0]].

    Raises:
        IllPosedError: L = [[I, -sigma D_K], [-D22, I]] is singular
    """
    P, _, _, X = _interconnect(plant, ctrl_ss, sign)
    return la.block_diag(P.A, ctrl_ss.A) + la.block_diag(P.B2, ctrl_ss.B) @ X


def closed_loop_statespace(plant, ctrl_ss, sign=FeedbackSign.NEGATIVE):
    """Realization of the lower LFT w -> z; its A is closed_loop_matrix."""
    P, _, L, X = _interconnect(plant, ctrl_ss, sign)
    m, k = P.B2.shape[1], ctrl_ss.n_states
    p1, p2, m1 = P.C1.shape[0], P.C2.shape[0], P.B1.shape[1]
    Xw = np.linalg.solve(L, np.vstack([np.zeros((m, m1)), P.D21]))
    inject = la.block_diag(P.B2, ctrl_ss.B)
    out = np.hstack([P.D12, np.zeros((p1, p2))])
    return StateSpace(
        A=la.block_diag(P.A, ctrl_ss.A) + inject @ X,
        B=np.vstack([P.B1, np.zeros((k, m1))]) + inject @ Xw,
        C=np.hstack([P.C1, np.zeros((p1, k))]) + out @ X,
        D=P.D11 + out @ Xw,
    )


@dataclass(frozen=True, eq=False)
class MatrixPencil:
    """Pencil s E - M."""

    E: np.ndarray
    M: np.ndarray

    def eigenvalues(self):
        """Homogeneous eigenvalue pairs (alpha, beta)."""
        alpha, beta = la.eigvals(self.M, self.E, homogeneous_eigvals=True)
        return alpha, beta

    def _infinite_mask(self, rtol):
        alpha, beta = self.eigenvalues()
        return alpha, beta, np.abs(beta) <= rtol * np.abs(alpha)

    def finite_eigenvalues(self, rtol=1e-12):
        alpha, beta, infinite = self._infinite_mask(rtol)
        return alpha[~infinite] / beta[~infinite]

    def infinite_count(self, rtol=1e-12):
        return int(np.count_nonzero(self._infinite_mask(rtol)[2]))


def closed_loop_pencil(plant, ctrl):
    """Index-one dissipative Hamiltonian pencil of the negative feedback loop."""
    from phsynth.decorators.guards import check_ph_argument

    check_ph_argument("plant", plant)
    check_ph_argument("ctrl", ctrl)
    ph = plant.ph if isinstance(plant, PHPlant) else plant
    if not isinstance(ph, PHForm) or not isinstance(ctrl, PHForm):
        raise StructuralError("closed_loop_pencil needs pH plant and controller")
    if ph.n_ports != ctrl.n_ports:
        raise StructuralError(f"Port mismatch: plant {ph.n_ports}, controller {ctrl.n_ports}")

    P = ph_to_statespace(ph)
    K = ph_to_statespace(ctrl)
    n, k, m = P.n_states, K.n_states, ph.n_ports
    I_m, Z = np.eye(m), np.zeros
    M = np.block(
        [
            [P.A, Z((n, k)), P.B, Z((n, m))],
            [Z((k, n)), K.A, Z((k, m)), K.B],
            [-P.C, Z((m, k)), -P.D, -I_m],
            [Z((m, n)), -K.C, I_m, -K.D],
        ]
    )
    E = la.block_diag(np.eye(n + k), np.zeros((2 * m, 2 * m)))
    return MatrixPencil(E=E, M=M)


class ClosedLoop:
    """Evaluable lower LFT P * K(i omega) over a plant source."""

    def __init__(self, plant, controller, sign=FeedbackSign.NEGATIVE, threads=1):
        self.source = as_plant_source(plant, threads=threads)
        self.controller = ph_to_statespace(controller) if isinstance(controller, PHForm) else controller
        self.sign = FeedbackSign.parse(sign)

    def evaluate(self, omega):
        pe = self.source.evaluate(omega)
        return lower_lft(pe, eval_transfer(self.controller, 1j * omega), self.sign)


def zero_controller(m, p2):
    """Static zero gain with m outputs and p2 inputs."""
    return StateSpace(np.zeros((0, 0)), np.zeros((0, p2)), np.zeros((m, 0)), np.zeros((m, p2)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray


def _rk4_step_maps(A, B, dt):
    """
    Exact one-step maps of classical RK4 on x' = Ax + Bu with u held constant.

    RK4 applied to a linear system is the degree-4 Taylor polynomial of the
    matrix exponential, so the step is x+ = Phi x + Gamma u.
    """
    n = A.shape[0]
    hA = dt * A
    hA2 = hA @ hA
    hA3 = hA2 @ hA
    Phi = np.eye(n) + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
    Gamma = dt * (np.eye(n) + hA / 2 + hA2 / 6 + hA3 / 24) @ B
    return Phi, Gamma


def simulate_lti(ss, u, x0, dt):
    """
    Fixed-step RK4 simulation with zero-order-hold input.

    Args:
        ss (StateSpace): system to simulate
        u (array): input samples, shape (steps, inputs); u[j] is held on [t_j, t_{j+1})
        x0 (array): initial state
        dt (float): step size

    Returns:
        Trajectory: states and outputs at t_j = j*dt, j = 0..steps
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, 1) if ss.n_inputs == 1 else u.reshape(1, -1)
    if u.shape[1] != ss.n_inputs:
        raise StructuralError(f"u has {u.shape[1]} channels, expected {ss.n_inputs}")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != ss.n_states:
        raise StructuralError(f"x0 has length {x0.size}, expected {ss.n_states}")

    steps = u.shape[0]
    Phi, Gamma = _rk4_step_maps(ss.A, ss.B, dt)
    x = np.empty((steps + 1, ss.n_states))
    x[0] = x0
    for j in range(steps):
        x[j + 1] = Phi @ x[j] + Gamma @ u[j]

    held = np.vstack([u, u[-1:]]) if steps else np.zeros((1, ss.n_inputs))
    y = x @ ss.C.T + held @ ss.D.T
    return Trajectory(t=dt * np.arange(steps + 1), x=x, y=y, u=u)


def dissipation_residual(ph, trajectory, dt):
    """H(x_N) - H(x_0) - integral of y^T u, trapezoidal on each hold interval."""
    ss = ph_to_statespace(ph)
    x, u = trajectory.x, trajectory.u
    if u.shape[0] == 0:
        return 0.0
    y_start = x[:-1] @ ss.C.T + u @ ss.D.T
    y_end = x[1:] @ ss.C.T + u @ ss.D.T
    supplied = 0.5 * dt * float(np.sum((y_start + y_end) * u))
    return hamiltonian_value(ph, x[-1]) - hamiltonian_value(ph, x[0]) - supplied
