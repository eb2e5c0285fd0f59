"""
PH Core Service - Port-Hamiltonian realizations and their parameterization

This service is responsible for:
1. Holding pH realizations, pH plants and plain state-space realizations
2. Validating the structural constraints of a pH realization
3. Mapping between the unconstrained parameter vector and pH controllers
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from phsynth.config import DEFAULT_TOLERANCES
from phsynth.exceptions import CertificateError, StructuralError, ValidationError
from phsynth.utils.linalg_utils import (
    min_eig_sym,
    strict_upper_entries,
    sym,
    upper_entries,
    upper_factor,
    vtf,
    vtsu,
    vtu,
)

# Set up logging
logger = logging.getLogger(__name__)

THETA_BLOCKS = ("J", "W", "Q", "G", "N")


def _as_matrix(value, name):
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise StructuralError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _expect_shape(arr, shape, name):
    if arr.shape != shape:
        raise StructuralError(f"{name} has shape {arr.shape}, expected {shape}")


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Generic realization (A, B, C, D)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "D"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n = self.A.shape[0]
        _expect_shape(self.A, (n, n), "A")
        if self.B.shape[0] != n:
            raise StructuralError(f"B has {self.B.shape[0]} rows, expected {n}")
        if self.C.shape[1] != n:
            raise StructuralError(f"C has {self.C.shape[1]} columns, expected {n}")
        _expect_shape(self.D, (self.C.shape[0], self.B.shape[1]), "D")

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class PHForm:
    """Structured realization ((J-R)Q, G-F, (G+F)^T Q, S-N)."""

    J: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    G: np.ndarray
    F: np.ndarray
    S: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        for name in ("J", "R", "Q", "G", "F", "S", "N"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n = self.J.shape[0]
        m = self.G.shape[1]
        for name in ("J", "R", "Q"):
            _expect_shape(getattr(self, name), (n, n), name)
        for name in ("G", "F"):
            _expect_shape(getattr(self, name), (n, m), name)
        for name in ("S", "N"):
            _expect_shape(getattr(self, name), (m, m), name)

    @property
    def n_states(self):
        return self.J.shape[0]

    @property
    def n_ports(self):
        return self.G.shape[1]

    @property
    def W(self):
        return np.block([[self.R, self.F], [self.F.T, self.S]])


@dataclass(frozen=True, eq=False)
class PHPlant:
    """pH u->y channel plus unstructured performance channels w->z."""

    ph: PHForm
    B1: np.ndarray
    C1: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray

    def __post_init__(self):
        if not isinstance(self.ph, PHForm):
            raise StructuralError("ph must be a PHForm")
        for name in ("B1", "C1", "D11", "D12", "D21"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n, m = self.ph.n_states, self.ph.n_ports
        m1 = self.B1.shape[1]
        p1 = self.C1.shape[0]
        _expect_shape(self.B1, (n, m1), "B1")
        _expect_shape(self.C1, (p1, n), "C1")
        _expect_shape(self.D11, (p1, m1), "D11")
        _expect_shape(self.D12, (p1, m), "D12")
        _expect_shape(self.D21, (m, m1), "D21")

    @property
    def n(self):
        return self.ph.n_states

    @property
    def m(self):
        return self.ph.n_ports

    @property
    def p2(self):
        return self.ph.n_ports

    @property
    def m1(self):
        return self.B1.shape[1]

    @property
    def p1(self):
        return self.C1.shape[0]


@dataclass(frozen=True, eq=False)
class PlantStateSpace:
    """Partitioned plant realization with D22 = S - N for pH plants."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray

    def __post_init__(self):
        names = ("A", "B1", "B2", "C1", "C2", "D11", "D12", "D21", "D22")
        for name in names:
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n = self.A.shape[0]
        m1, m = self.B1.shape[1], self.B2.shape[1]
        p1, p2 = self.C1.shape[0], self.C2.shape[0]
        _expect_shape(self.A, (n, n), "A")
        _expect_shape(self.B1, (n, m1), "B1")
        _expect_shape(self.B2, (n, m), "B2")
        _expect_shape(self.C1, (p1, n), "C1")
        _expect_shape(self.C2, (p2, n), "C2")
        _expect_shape(self.D11, (p1, m1), "D11")
        _expect_shape(self.D12, (p1, m), "D12")
        _expect_shape(self.D21, (p2, m1), "D21")
        _expect_shape(self.D22, (p2, m), "D22")

    @property
    def n_states(self):
        return self.A.shape[0]

    def assemble(self):
        """Unpartitioned realization with inputs (w, u) and outputs (z, y)."""
        return StateSpace(
            self.A,
            np.hstack([self.B1, self.B2]),
            np.vstack([self.C1, self.C2]),
            np.block([[self.D11, self.D12], [self.D21, self.D22]]),
        )


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    passed: bool
    violation: float
    tolerance: float


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple = field(default_factory=tuple)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failed_names(self):
        return [c.name for c in self.checks if not c.passed]

    def get(self, name):
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self):
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "violation": c.violation, "tolerance": c.tolerance}
                for c in self.checks
            ],
        }


def validate_ph_form(ph, tol=None):
    """
    Check the structural constraints of a pH realization.

    Args:
        ph (PHForm): realization to check
        tol (ToleranceSet): tolerances, defaults to DEFAULT_TOLERANCES

    Returns:
        ValidationReport: per-constraint result with the measured violation
    """
    if not isinstance(ph, PHForm):
        raise StructuralError(f"Expected PHForm, got {type(ph).__name__}")
    tol = tol or DEFAULT_TOLERANCES
    checks = []

    for name, mat in (("J skewness", ph.J), ("N skewness", ph.N)):
        violation = float(np.linalg.norm(mat + mat.T, "fro"))
        limit = tol.struct * max(1.0, float(np.linalg.norm(mat, "fro")))
        checks.append(ConstraintCheck(name, violation <= limit, violation, limit))

    W = ph.W
    violation = float(np.linalg.norm(W - W.T, "fro"))
    limit = tol.struct * max(1.0, float(np.linalg.norm(W, "fro")))
    checks.append(ConstraintCheck("W symmetry", violation <= limit, violation, limit))

    w_min = min_eig_sym(W)
    w_scale = float(np.linalg.norm(W, 2)) if W.size else 0.0
    limit = tol.psd * w_scale
    checks.append(ConstraintCheck("W positive semidefiniteness", w_min >= -limit, w_min, -limit))

    violation = float(np.linalg.norm(ph.Q - ph.Q.T, "fro"))
    limit = tol.struct * max(1.0, float(np.linalg.norm(ph.Q, "fro")))
    checks.append(ConstraintCheck("Q symmetry", violation <= limit, violation, limit))

    q_min = min_eig_sym(ph.Q)
    checks.append(ConstraintCheck("Q positive definiteness", q_min >= tol.pd, q_min, tol.pd))

    report = ValidationReport(tuple(checks))
    if not report.passed:
        logger.debug(f"pH validation failed: {report.failed_names()}")
    return report


def theta_partition(k, p2):
    """Offsets (start, stop) of the blocks J, W, Q, G, N inside theta."""
    sizes = {
        "J": k * (k - 1) // 2,
        "W": (k + p2) * (k + p2 + 1) // 2,
        "Q": k * (k + 1) // 2,
        "G": k * p2,
        "N": p2 * (p2 - 1) // 2,
    }
    offsets = {}
    start = 0
    for name in THETA_BLOCKS:
        offsets[name] = (start, start + sizes[name])
        start += sizes[name]
    return offsets


def theta_size(k, p2):
    return theta_partition(k, p2)["N"][1]


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """Flat controller parameter vector for order k and p2 ports."""

    data: np.ndarray
    k: int
    p2: int

    def __post_init__(self):
        if self.k < 1 or self.p2 < 1:
            raise StructuralError(f"Controller order and port count must be positive, got k={self.k}, p2={self.p2}")
        data = np.array(self.data, dtype=float).ravel()
        expected = theta_size(self.k, self.p2)
        if data.size != expected:
            raise StructuralError(f"theta has length {data.size}, expected {expected} for k={self.k}, p2={self.p2}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def offsets(self):
        return theta_partition(self.k, self.p2)

    def block(self, name):
        start, stop = self.offsets[name]
        return self.data[start:stop]

    def with_data(self, data):
        return ThetaVector(data, self.k, self.p2)

    def __len__(self):
        return self.data.size


def unpack_parameters(theta):
    """
    Build (J_K, W_K, Q_K, G_K, N_K) from theta.

    Q_K is returned without any diagonal shift.
    """
    if not isinstance(theta, ThetaVector):
        raise StructuralError(f"Expected ThetaVector, got {type(theta).__name__}")
    k, p2 = theta.k, theta.p2
    upper_J = vtsu(theta.block("J"), k)
    U_W = vtu(theta.block("W"), k + p2)
    U_Q = vtu(theta.block("Q"), k)
    upper_N = vtsu(theta.block("N"), p2)

    J = upper_J.T - upper_J
    W = sym(U_W.T @ U_W)
    Q = sym(U_Q.T @ U_Q)
    G = vtf(theta.block("G"), k, p2)
    N = upper_N.T - upper_N
    return J, W, Q, G, N


def theta_to_controller(theta, shift=1e-8):
    """pH controller built from theta; Q_K gets `shift` on its diagonal."""
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    J, W, Q, G, N = unpack_parameters(theta)
    k = theta.k
    return PHForm(
        J=J,
        R=W[:k, :k],
        Q=Q + shift * np.eye(k),
        G=G,
        F=W[:k, k:],
        S=W[k:, k:],
        N=N,
    )


def controller_to_theta(ph, tol=None):
    """
    Recover theta from a pH controller.

    W and Q are factored with upper-triangular factors that have a nonnegative
    diagonal, so theta_to_controller(controller_to_theta(ph), 0) reproduces ph.

    Raises:
        CertificateError: W is indefinite or Q is not positive definite
        ValidationError: J or N is not skew-symmetric
    """
    report = validate_ph_form(ph, tol)
    for name in ("W positive semidefiniteness", "Q positive definiteness"):
        check = report.get(name)
        if not check.passed:
            raise CertificateError(f"No triangular factor: {name} fails (min eigenvalue {check.violation:.3e})")
    skew_failures = [c.name for c in report.checks if not c.passed and "skewness" in c.name]
    if skew_failures:
        raise ValidationError(f"Controller violates: {', '.join(skew_failures)}", failed=skew_failures)

    k, p2 = ph.n_states, ph.n_ports
    try:
        U_Q = np.linalg.cholesky(sym(ph.Q)).T
    except np.linalg.LinAlgError as e:
        raise CertificateError("Q has no Cholesky factor") from e
    U_W = upper_factor(ph.W)

    data = np.concatenate(
        [
            -strict_upper_entries(ph.J),
            upper_entries(U_W),
            upper_entries(U_Q),
            ph.G.ravel(order="F"),
            -strict_upper_entries(ph.N),
        ]
    )
    return ThetaVector(data, k, p2)


def ph_to_statespace(ph):
    return StateSpace(
        A=(ph.J - ph.R) @ ph.Q,
        B=ph.G - ph.F,
        C=(ph.G + ph.F).T @ ph.Q,
        D=ph.S - ph.N,
    )


def plant_statespace(plant):
    """Partitioned realization of a pH plant."""
    ss = ph_to_statespace(plant.ph)
    return PlantStateSpace(
        A=ss.A,
        B1=plant.B1,
        B2=ss.B,
        C1=plant.C1,
        C2=ss.C,
        D11=plant.D11,
        D12=plant.D12,
        D21=plant.D21,
        D22=ss.D,
    )


def statespace_to_ph(ss, X):
    """
    pH realization of a passive system from a KYP solution X > 0.

    With Q = X the structure follows from A X^{-1}, X^{-1} C^T and D; the
    passivity matrix W is positive semidefinite exactly when X satisfies
    the KYP inequality.
    """
    X = sym(np.asarray(X, dtype=float))
    if X.shape != (ss.n_states, ss.n_states):
        raise StructuralError(f"X has shape {X.shape}, expected {(ss.n_states, ss.n_states)}")
    if ss.n_inputs != ss.n_outputs:
        raise StructuralError("pH realizations need as many inputs as outputs")
    try:
        factor = la.cho_factor(X)
    except la.LinAlgError as e:
        raise CertificateError("KYP solution X is not positive definite") from e

    JmR = la.cho_solve(factor, ss.A.T).T
    GpF = la.cho_solve(factor, ss.C.T)
    return PHForm(
        J=0.5 * (JmR - JmR.T),
        R=-0.5 * (JmR + JmR.T),
        Q=X,
        G=0.5 * (ss.B + GpF),
        F=0.5 * (GpF - ss.B),
        S=0.5 * (ss.D + ss.D.T),
        N=-0.5 * (ss.D - ss.D.T),
    )


def hamiltonian_value(ph, x):
    """Stored energy 1/2 x^T Q x."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != ph.n_states:
        raise StructuralError(f"x has length {x.size}, expected {ph.n_states}")
    return 0.5 * float(x @ ph.Q @ x)
