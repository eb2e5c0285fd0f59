import numpy as np
import pytest

from phsynth.services.ph_core import PHForm, PHPlant, StateSpace


def random_ph(rng, n, m, damping=0.3):
    """Well-conditioned random pH realization with positive definite W."""
    J = rng.standard_normal((n, n))
    J = J - J.T
    L = rng.standard_normal((n + m, n + m))
    W = damping * (L @ L.T) / (n + m) + damping * np.eye(n + m)
    M = rng.standard_normal((n, n))
    Q = np.eye(n) + 0.5 * (M @ M.T) / n
    N = rng.standard_normal((m, m))
    return PHForm(
        J=J,
        R=W[:n, :n],
        Q=Q,
        G=rng.standard_normal((n, m)),
        F=W[:n, n:],
        S=W[n:, n:],
        N=0.5 * (N - N.T),
    )


def random_plant(rng, n, m, m1=1, p1=1):
    return PHPlant(
        ph=random_ph(rng, n, m),
        B1=rng.standard_normal((n, m1)),
        C1=rng.standard_normal((p1, n)),
        D11=0.1 * rng.standard_normal((p1, m1)),
        D12=rng.standard_normal((p1, m)),
        D21=rng.standard_normal((m, m1)),
    )


def random_stable(rng, n, m, p, margin=0.5):
    A = rng.standard_normal((n, n))
    A = A - (np.max(np.linalg.eigvals(A).real) + margin) * np.eye(n)
    return StateSpace(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)), np.zeros((p, m)))


def assert_same_spectrum(a, b, tol):
    """Greedy nearest matching of two eigenvalue multisets."""
    a, b = list(np.asarray(a)), list(np.asarray(b))
    assert len(a) == len(b)
    for x in a:
        distances = [abs(x - y) for y in b]
        j = int(np.argmin(distances))
        assert distances[j] <= tol, f"{x} has no partner within {tol}"
        b.pop(j)


def frequency_response(ss, omegas):
    """G(i omega) stacked over omegas, through the eigendecomposition of A."""
    lam, V = np.linalg.eig(ss.A)
    Bm = np.linalg.solve(V, ss.B)
    Cm = ss.C @ V
    weights = 1.0 / (1j * np.asarray(omegas, dtype=float)[:, None] - lam[None, :])
    return np.einsum("pn,wn,nm->wpm", Cm, weights, Bm) + ss.D


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def lag():
    """1 / (s + 1)"""
    return StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])


@pytest.fixture
def resonant():
    """1 / (s^2 + 0.1 s + 1)"""
    return StateSpace([[0.0, 1.0], [-1.0, -0.1]], [[0.0], [1.0]], [[1.0, 0.0]], [[0.0]])


@pytest.fixture
def nonpassive_controller():
    """Popov function 2 + 2*(-3)/(1 + omega^2), negative near omega = 0."""
    return StateSpace([[-1.0]], [[1.0]], [[-3.0]], [[1.0]])


@pytest.fixture
def cancelling_plant():
    """Scalar plant whose negative-feedback loop with nonpassive_controller is the constant 0.2."""
    ph = PHForm(J=[[0.0]], R=[[1.0]], Q=[[1.0]], G=[[0.0]], F=[[0.0]], S=[[0.0]], N=[[0.0]])
    return PHPlant(ph=ph, B1=[[1.0]], C1=[[-3.0]], D11=[[1.2]], D12=[[1.0]], D21=[[1.0]])
