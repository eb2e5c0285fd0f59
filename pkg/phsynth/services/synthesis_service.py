"""
Synthesis Service - Sample-based fixed-order pH H-infinity synthesis

This service is responsible for:
1. The hinge-squared loss over sampled closed-loop singular values and its gradient
2. Adaptive sample management from a dense audit grid
3. BFGS inner minimization
4. The gamma-bisection outer loop and post-hoc validation of the result
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from phsynth.decorators.guards import requires_valid_ph
from phsynth.exceptions import (
    ConfigurationError,
    FrequencyError,
    InfeasibleError,
    InstabilityError,
    IllPosedError,
    PoleAtSampleError,
    SynthesisError,
)
from phsynth.services.hinf_service import grid_hinf_bound, hinf_norm, spectral_abscissa
from phsynth.services.lti_service import (
    ClosedLoop,
    FeedbackSign,
    SampledPlant,
    WELLPOSED_RTOL,
    as_plant_source,
    closed_loop_matrix,
    closed_loop_statespace,
    make_grid,
    normalize_grid,
)
from phsynth.services.optimizer_service import bfgs
from phsynth.services.passivity_service import kyp_check
from phsynth.services.ph_core import (
    THETA_BLOCKS,
    ThetaVector,
    ph_to_statespace,
    theta_to_controller,
)
from phsynth.utils.linalg_utils import strict_upper_entries, upper_entries, vtu

# Set up logging
logger = logging.getLogger(__name__)

INITIAL = "initial"
ADAPTIVE = "adaptive"


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Sorted, deduplicated sample frequencies with a provenance tag per point."""

    omegas: np.ndarray
    generation: int = 0
    provenance: tuple = ()

    def __post_init__(self):
        raw = np.asarray(self.omegas, dtype=float).ravel()
        tags = tuple(self.provenance) or (INITIAL,) * raw.size
        if len(tags) != raw.size:
            raise ValueError("provenance needs one tag per sample")
        omegas = normalize_grid(raw)
        if omegas.size == 0:
            raise ValueError("SampleSet must not be empty")
        lookup = {}
        for w, tag in zip(raw, tags):
            lookup.setdefault(float(w), tag)
        tags = tuple(lookup.get(float(w), INITIAL) for w in omegas)
        omegas.setflags(write=False)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "provenance", tags)

    def __len__(self):
        return self.omegas.size

    def with_points(self, points):
        """New generation containing the extra points tagged adaptive."""
        points = np.asarray(points, dtype=float).ravel()
        return SampleSet(
            np.concatenate([self.omegas, points]),
            self.generation + 1,
            self.provenance + (ADAPTIVE,) * points.size,
        )


@dataclass(frozen=True)
class SynthesisConfig:
    k: int
    gamma_u: Optional[float] = None
    eps1: float = 1e-2
    eps2: float = 1e-6
    max_iter: int = 500
    omega_min: float = 1e-3
    omega_max: float = 1e3
    n_samples: int = 100
    seed: int = 0
    sign: FeedbackSign = FeedbackSign.NEGATIVE
    shift: float = 1e-8
    init_scale: float = 0.1
    audit_points: int = 1000
    audit_delta: float = 0.05
    audit_gap: float = 1e-3
    gamma_u_doublings: int = 10
    dense_limit: int = 200

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("Controller order k must be >= 1")
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ConfigurationError("eps1 and eps2 must be positive")
        if not 0 < self.omega_min < self.omega_max:
            raise ConfigurationError(f"Need 0 < omega_min < omega_max, got [{self.omega_min}, {self.omega_max}]")
        if self.gamma_u is not None and self.gamma_u <= 0:
            raise ConfigurationError("gamma_u must be positive")
        if self.n_samples < 1 or self.max_iter < 1 or self.audit_points < 2:
            raise ConfigurationError("Sample counts and iteration budget must be positive")
        if self.shift < 0:
            raise ConfigurationError("shift must be nonnegative")
        object.__setattr__(self, "sign", FeedbackSign.parse(self.sign))

    @classmethod
    def from_settings(cls, settings, **overrides):
        """Config from a load_configurations() dict; overrides that are None are ignored."""
        values = {
            "eps1": settings["EPS1"],
            "eps2": settings["EPS2"],
            "max_iter": settings["MAX_ITER"],
            "omega_min": settings["OMEGA_MIN"],
            "omega_max": settings["OMEGA_MAX"],
            "n_samples": settings["SAMPLES"],
            "seed": settings["SEED"],
            "shift": settings["SHIFT"],
        }
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass(frozen=True)
class BisectionStep:
    gamma: float
    alpha: float
    n_samples: int
    bfgs_iterations: int
    accepted: bool
    gamma_l: float
    gamma_u: float


@dataclass(eq=False)
class SynthesisReport:
    theta: ThetaVector
    controller: object
    gamma_l: float
    gamma_u: float
    history: list
    hinf: object
    spectral_abscissa: float
    certificate: object
    runtime: float
    factorizations: int
    n_samples: int
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "k": self.theta.k,
            "p2": self.theta.p2,
            "theta": self.theta.data.tolist(),
            "gamma_l": self.gamma_l,
            "gamma_u": self.gamma_u,
            "history": [step.__dict__ for step in self.history],
            "hinf": self.hinf.to_dict() if self.hinf is not None else None,
            "spectral_abscissa": self.spectral_abscissa,
            "passivity": self.certificate.to_dict() if self.certificate is not None else None,
            "runtime_seconds": self.runtime,
            "plant_factorizations": self.factorizations,
            "n_samples": self.n_samples,
            "notes": list(self.notes),
        }


@dataclass(frozen=True, eq=False)
class LossMinimum:
    theta: ThetaVector
    alpha: float
    iterations: int
    degraded: bool

    def __iter__(self):
        yield self.theta
        yield self.alpha


def initial_theta(k, p2, seed=0, scale=0.1):
    """
    Starting parameters near the zero-interconnection controller.

    The W and Q factors are identity plus small upper-triangular noise; J, G
    and N are small gaussians.
    """
    rng = np.random.default_rng(seed)

    def _factor(size):
        return upper_entries(np.eye(size) + scale * np.triu(rng.standard_normal((size, size))))

    blocks = {
        "J": scale * rng.standard_normal(k * (k - 1) // 2),
        "W": _factor(k + p2),
        "Q": _factor(k),
        "G": scale * rng.standard_normal(k * p2),
        "N": scale * rng.standard_normal(p2 * (p2 - 1) // 2),
    }
    return ThetaVector(np.concatenate([blocks[name] for name in THETA_BLOCKS]), k, p2)


def _sample_omegas(S):
    return S.omegas if isinstance(S, SampleSet) else normalize_grid(S)


def _batched_resolvent_solve(M, rhs, omegas):
    try:
        return np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        for i, omega in enumerate(omegas):
            try:
                np.linalg.solve(M[i], rhs[i])
            except np.linalg.LinAlgError:
                raise PoleAtSampleError("Controller has a pole at a sample", s=1j * omega) from None
        raise


def _check_wellposed_batch(M, omegas):
    sv = np.linalg.svd(M, compute_uv=False)
    bad = sv[:, -1] <= WELLPOSED_RTOL * np.maximum(1.0, sv[:, 0])
    if np.any(bad):
        raise IllPosedError("Closed loop is ill-posed at a sample", s=1j * omegas[np.argmax(bad)])


class _ClosedLoopSamples:
    """Closed-loop evaluation of a controller realization over stacked samples."""

    def __init__(self, source, ctrl, omegas, sign):
        sigma = FeedbackSign.parse(sign).value
        pe = source.evaluate_many(omegas)
        k = ctrl.n_states
        s = 1j * omegas[:, None, None]
        M = s * np.eye(k) - ctrl.A
        X = _batched_resolvent_solve(M, np.broadcast_to(ctrl.B.astype(complex), (omegas.size,) + ctrl.B.shape), omegas)
        Yt = _batched_resolvent_solve(
            np.swapaxes(M, 1, 2), np.broadcast_to(ctrl.C.T.astype(complex), (omegas.size,) + ctrl.C.T.shape), omegas
        )
        Y = np.swapaxes(Yt, 1, 2)
        K = ctrl.C @ X + ctrl.D

        p2, m = pe.P22.shape[1], pe.P22.shape[2]
        Mr = np.eye(p2) - sigma * pe.P22 @ K
        Ml = np.eye(m) - sigma * K @ pe.P22
        _check_wellposed_batch(Mr, omegas)
        Lr = np.linalg.solve(Mr, pe.P21)
        Ll = np.swapaxes(np.linalg.solve(np.swapaxes(Ml, 1, 2), np.swapaxes(pe.P12, 1, 2)), 1, 2)

        self.sigma = sigma
        self.X, self.Y, self.Lr, self.Ll = X, Y, Lr, Ll
        self.T = pe.P11 + sigma * pe.P12 @ K @ Lr


def _loss_terms(cl, gamma, with_gradient):
    if with_gradient:
        U, sv, Vh = np.linalg.svd(cl.T, full_matrices=False)
    else:
        sv = np.linalg.svd(cl.T, compute_uv=False)
    excess = np.clip(sv - gamma, 0.0, None)
    value = float(np.sum(excess**2) / gamma)
    if not with_gradient:
        return value, None
    c = 2.0 * excess / gamma
    Gbar = np.conj(np.swapaxes(Vh, 1, 2)) @ (c[:, :, None] * np.conj(np.swapaxes(U, 1, 2)))
    Z = cl.sigma * cl.Lr @ Gbar @ cl.Ll
    XZ = cl.X @ Z
    gD = np.real(np.sum(Z, axis=0)).T
    gC = np.real(np.sum(XZ, axis=0)).T
    gB = np.real(np.sum(Z @ cl.Y, axis=0)).T
    gA = np.real(np.sum(XZ @ cl.Y, axis=0)).T
    return value, (gA, gB, gC, gD)


def _theta_gradient(theta, ctrl_ph, grads):
    """Pull realization gradients back through the pH structure onto theta."""
    gA, gB, gC, gD = grads
    k = theta.k
    J, R, Q = ctrl_ph.J, ctrl_ph.R, ctrl_ph.Q
    G, F = ctrl_ph.G, ctrl_ph.F

    gJ = gA @ Q.T
    gR = -gJ
    gQ = (J - R).T @ gA + (G + F) @ gC
    gG = gB + Q @ gC.T
    gF = -gB + Q @ gC.T
    gS = gD
    gN = -gD

    U_W = vtu(theta.block("W"), k + theta.p2)
    U_Q = vtu(theta.block("Q"), k)
    GW = np.zeros_like(U_W)
    GW[:k, :k] = gR
    GW[:k, k:] = gF
    GW[k:, k:] = gS

    blocks = {
        "J": strict_upper_entries(gJ.T - gJ),
        "W": upper_entries(U_W @ (GW + GW.T)),
        "Q": upper_entries(U_Q @ (gQ + gQ.T)),
        "G": gG.ravel(order="F"),
        "N": strict_upper_entries(gN.T - gN),
    }
    return np.concatenate([blocks[name] for name in THETA_BLOCKS])


def loss_and_gradient(gamma, plant, theta, S, sign=FeedbackSign.NEGATIVE, shift=1e-8, with_gradient=True):
    """
    Loss (1/gamma) * sum over samples and singular values of ([sigma_j - gamma]_+)^2,
    with its gradient in theta from the same closed-loop evaluations.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    source = as_plant_source(plant)
    omegas = _sample_omegas(S)
    ctrl_ph = theta_to_controller(theta, shift)
    cl = _ClosedLoopSamples(source, ph_to_statespace(ctrl_ph), omegas, sign)
    value, grads = _loss_terms(cl, gamma, with_gradient)
    if not with_gradient:
        return value, None
    return value, _theta_gradient(theta, ctrl_ph, grads)


def loss(gamma, plant, theta, S, sign=FeedbackSign.NEGATIVE, shift=1e-8):
    return loss_and_gradient(gamma, plant, theta, S, sign, shift, with_gradient=False)[0]


def loss_gradient(gamma, plant, theta, S, sign=FeedbackSign.NEGATIVE, shift=1e-8):
    return loss_and_gradient(gamma, plant, theta, S, sign, shift)[1]


def closed_loop_sigma_max(plant, theta, omegas, sign=FeedbackSign.NEGATIVE, shift=1e-8):
    """Largest closed-loop singular value at each frequency."""
    source = as_plant_source(plant)
    omegas = np.asarray(omegas, dtype=float)
    ctrl = ph_to_statespace(theta_to_controller(theta, shift))
    cl = _ClosedLoopSamples(source, ctrl, omegas, sign)
    return np.linalg.svd(cl.T, compute_uv=False)[:, 0]


def _local_maxima(curve):
    n = curve.size
    if n == 1:
        return np.array([0])
    left = np.concatenate([[-np.inf], curve[:-1]])
    right = np.concatenate([curve[1:], [-np.inf]])
    return np.flatnonzero((curve > left) & (curve >= right))


def update_samples(S, plant, theta, gamma, config=None):
    """
    Add audit-grid local maxima of sigma_max that come close to or exceed gamma.

    A maximum is added when it exceeds gamma * (1 - audit_delta) and lies
    farther than `audit_gap` (relative) from every existing sample. Points
    are never removed. Sampled plants audit on their own frequencies only.
    """
    config = config or SynthesisConfig(k=theta.k)
    source = as_plant_source(plant)
    audit = np.asarray(source.audit_grid(config.omega_min, config.omega_max, config.audit_points), dtype=float)
    if audit.size == 0:
        return S
    curve = closed_loop_sigma_max(source, theta, audit, config.sign, config.shift)
    threshold = gamma * (1 - config.audit_delta)

    existing = S.omegas
    added = []
    for i in _local_maxima(curve):
        if curve[i] <= threshold:
            continue
        omega = audit[i]
        pool = np.concatenate([existing, added]) if added else existing
        gap = np.min(np.abs(pool - omega)) / max(omega, np.finfo(float).tiny)
        if gap > config.audit_gap:
            added.append(omega)
    if not added:
        return S
    logger.debug(f"Adding {len(added)} samples at gamma={gamma:.6g}: {np.round(added, 6).tolist()}")
    return S.with_points(added)


def minimize_loss(gamma, plant, theta0, S, budget=500, sign=FeedbackSign.NEGATIVE, shift=1e-8, eps2=1e-6):
    """
    BFGS on the sampled loss from theta0.

    Returns:
        LossMinimum: unpacks as (theta, alpha)

    Raises:
        SynthesisError: the closed loop is ill-posed or has a sample pole at theta0
    """
    source = as_plant_source(plant)
    omegas = _sample_omegas(S)

    def objective(x):
        return loss_and_gradient(gamma, source, theta0.with_data(x), omegas, sign, shift)

    try:
        result = bfgs(objective, theta0.data, gtol=1e-8, ftarget=eps2 / 4, maxiter=budget)
    except FrequencyError as e:
        raise SynthesisError(f"Loss undefined at the starting point: {e}", iterate=theta0, gamma=gamma) from e
    if result.degraded:
        logger.warning(f"Inner minimization degraded at gamma={gamma:.6g}: {result.message}")
    return LossMinimum(theta0.with_data(result.x), float(result.fun), result.iterations, result.degraded)


def initial_samples(source, config):
    """Log-spaced initial samples; sampled plants take an evenly spread subset of their grid."""
    if isinstance(source, SampledPlant):
        pool = source.audit_grid(config.omega_min, config.omega_max)
        if pool.size == 0:
            raise ConfigurationError("Sampled plant has no frequencies inside [omega_min, omega_max]")
        pick = np.unique(np.round(np.linspace(0, pool.size - 1, min(config.n_samples, pool.size))).astype(int))
        return SampleSet(pool[pick])
    return SampleSet(make_grid(config.omega_min, config.omega_max, config.n_samples))


def _validate(source, controller, config, notes):
    """Post-hoc H-infinity norm, closed-loop abscissa and controller passivity."""
    ctrl_ss = ph_to_statespace(controller)
    certificate = kyp_check(ctrl_ss)
    if isinstance(source, SampledPlant):
        notes.append("sampled plant: H-infinity value is a grid bound on the file frequencies")
        closed = ClosedLoop(source, ctrl_ss, config.sign)
        return grid_hinf_bound(closed, source.omegas), float("nan"), certificate

    plant_ss = source.plant
    abscissa = spectral_abscissa(closed_loop_matrix(plant_ss, ctrl_ss, config.sign))
    if plant_ss.n_states + ctrl_ss.n_states <= config.dense_limit:
        try:
            return hinf_norm(closed_loop_statespace(plant_ss, ctrl_ss, config.sign), 1e-6), abscissa, certificate
        except InstabilityError as e:
            logger.warning(f"Dense H-infinity validation skipped: {e}")
            notes.append(str(e))
    closed = ClosedLoop(source, ctrl_ss, config.sign)
    grid = make_grid(config.omega_min, config.omega_max, config.audit_points)
    return grid_hinf_bound(closed, grid), abscissa, certificate


@requires_valid_ph("plant")
def sobsyn(plant, config, threads=1):
    """
    Gamma-bisection synthesis of a fixed-order pH controller.

    Each step updates the samples, warm-starts BFGS from the previous
    minimizer and accepts gamma when the loss falls to eps2. The final
    controller comes from the minimizer at the smallest accepted gamma.

    Args:
        plant: PHPlant, PlantStateSpace or SampledPlant
        config (SynthesisConfig): synthesis settings
        threads (int): worker threads for plant evaluation

    Returns:
        SynthesisReport

    Raises:
        InfeasibleError: no feasible gamma_u within the allowed doublings
        SynthesisError: the closed loop became ill-posed during optimization
    """
    started = time.perf_counter()
    source = as_plant_source(plant, threads=threads)
    m1, p1, m, p2 = source.dims
    if m != p2:
        raise ConfigurationError(f"pH controllers need as many plant inputs as measurements, got m={m}, p2={p2}")

    S = initial_samples(source, config)
    theta = initial_theta(config.k, p2, config.seed, config.init_scale)
    history = []

    def _minimize(gamma, theta, S):
        try:
            S = update_samples(S, source, theta, gamma, config)
            result = minimize_loss(gamma, source, theta, S, config.max_iter, config.sign, config.shift, config.eps2)
        except FrequencyError as e:
            raise SynthesisError(f"Closed loop failed during optimization: {e}", iterate=theta, gamma=gamma) from e
        return S, result

    gamma_u = config.gamma_u
    if gamma_u is None:
        peak = float(np.max(closed_loop_sigma_max(source, theta, S.omegas, config.sign, config.shift)))
        gamma_u = 1.1 * peak if peak > 0 else 1.0
    for attempt in range(config.gamma_u_doublings + 1):
        S, result = _minimize(gamma_u, theta, S)
        theta = result.theta
        if result.alpha <= config.eps2:
            break
        logger.info(f"gamma_u={gamma_u:.6g} infeasible (alpha={result.alpha:.3e}); doubling")
        gamma_u *= 2
    else:
        raise InfeasibleError(f"No feasible upper bound after {config.gamma_u_doublings} doublings")
    best = theta
    gamma_l = 0.0
    history.append(BisectionStep(gamma_u, result.alpha, len(S), result.iterations, True, gamma_l, gamma_u))

    while (gamma_u - gamma_l) / (gamma_u + gamma_l) > config.eps1:
        gamma = 0.5 * (gamma_u + gamma_l)
        S, result = _minimize(gamma, theta, S)
        theta = result.theta
        accepted = result.alpha <= config.eps2
        if accepted:
            gamma_u = gamma
            best = theta
        else:
            gamma_l = gamma
        history.append(BisectionStep(gamma, result.alpha, len(S), result.iterations, accepted, gamma_l, gamma_u))
        logger.info(
            f"gamma={gamma:.6g} alpha={result.alpha:.3e} samples={len(S)} "
            f"bfgs={result.iterations} -> [{gamma_l:.6g}, {gamma_u:.6g}]"
        )

    controller = theta_to_controller(best, config.shift)
    notes = []
    hinf, abscissa, certificate = _validate(source, controller, config, notes)
    if not certificate.passive:
        logger.warning(f"Synthesized controller failed the passivity check: {certificate.message}")
    runtime = time.perf_counter() - started
    logger.info(f"SOBSYN done in {runtime:.2f}s: gamma_u={gamma_u:.6g}, achieved H-infinity={hinf.norm:.6g}")
    return SynthesisReport(
        theta=best,
        controller=controller,
        gamma_l=gamma_l,
        gamma_u=gamma_u,
        history=history,
        hinf=hinf,
        spectral_abscissa=abscissa,
        certificate=certificate,
        runtime=runtime,
        factorizations=source.factorizations,
        n_samples=len(S),
        notes=notes,
    )
