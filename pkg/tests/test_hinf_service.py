import numpy as np
import pytest

from phsynth.exceptions import InstabilityError
from phsynth.services.hinf_service import grid_hinf_bound, hinf_norm, sigma_sweep, spectral_abscissa
from phsynth.services.lti_service import ClosedLoop, eval_plant, make_grid, zero_controller
from phsynth.services.msd_service import MSDConfig, msd_plant
from phsynth.services.ph_core import StateSpace
from tests.conftest import frequency_response, random_stable


class TestSigmaSweep:
    def test_scalar_lag(self, lag):
        table = sigma_sweep(lag, [0.0, 1.0, 10.0])
        np.testing.assert_allclose(table.max_curve(), [1.0, 0.70710678, 0.09950372], atol=1e-8)

    def test_static_gain(self):
        gain = StateSpace(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((2, 0)), [[3.0, 0.0], [0.0, 1.0]])
        table = sigma_sweep(gain, make_grid(0.01, 100, 5))
        np.testing.assert_allclose(table.values, np.tile([3.0, 1.0], (5, 1)))

    def test_closed_loop_matches_plant_blocks(self):
        plant = msd_plant(MSDConfig(n_masses=5))
        grid = make_grid(1e-2, 1e2, 50)
        loop = ClosedLoop(plant, zero_controller(plant.m, plant.p2))
        table = sigma_sweep(loop, grid, threads=3)
        brute = [np.linalg.svd(eval_plant(plant, 1j * w).P11, compute_uv=False) for w in grid]
        np.testing.assert_allclose(table.values, np.vstack(brute), rtol=0, atol=1e-12)

    def test_peak(self, resonant):
        peak, omega = sigma_sweep(resonant, make_grid(0.1, 10, 2001)).peak()
        assert peak == pytest.approx(10.0125, rel=1e-3)
        assert omega == pytest.approx(0.9975, rel=1e-2)

    def test_empty_grid(self, lag):
        with pytest.raises(ValueError):
            sigma_sweep(lag, [])

    def test_similarity_invariance(self, rng):
        grid = make_grid(1e-2, 1e2, 40)
        for _ in range(5):
            n = int(rng.integers(2, 9))
            ss = random_stable(rng, n, 2, 2)
            T = np.eye(n) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)
            Ti = np.linalg.inv(T)
            moved = StateSpace(T @ ss.A @ Ti, T @ ss.B, ss.C @ Ti, ss.D)
            np.testing.assert_allclose(
                sigma_sweep(moved, grid).values, sigma_sweep(ss, grid).values, rtol=1e-8, atol=1e-12
            )


class TestHinfNorm:
    def test_scalar_lag(self, lag):
        result = hinf_norm(lag, 1e-6)
        assert result.norm == pytest.approx(1.0, rel=1e-6)
        assert result.peak_omega == pytest.approx(0.0, abs=1e-3)
        assert result.converged

    def test_resonance(self, resonant):
        result = hinf_norm(resonant, 1e-6)
        assert result.norm == pytest.approx(10.0125, rel=1e-4)
        assert result.peak_omega == pytest.approx(np.sqrt(0.995), rel=1e-3)

    def test_static_system(self):
        ss = StateSpace(-np.eye(2), np.zeros((2, 1)), np.ones((2, 2)), [[2.0], [1.0]])
        result = hinf_norm(ss)
        assert result.norm == pytest.approx(np.sqrt(5.0))
        assert result.iterations == 0

    def test_unstable_raises(self):
        with pytest.raises(InstabilityError):
            hinf_norm(StateSpace([[0.5]], [[1.0]], [[1.0]], [[0.0]]))

    def test_unstable_without_input_path_raises(self):
        with pytest.raises(InstabilityError):
            hinf_norm(StateSpace([[0.5]], [[0.0]], [[1.0]], [[2.0]]))

    def test_bounds_random_systems(self, rng):
        grid = make_grid(1e-3, 1e3, 2000)
        for _ in range(10):
            n, m, p = rng.integers(1, 9), rng.integers(1, 3), rng.integers(1, 3)
            ss = random_stable(rng, n, m, p)
            result = hinf_norm(ss, 1e-6)
            assert result.converged
            assert result.norm >= np.max(sigma_sweep(ss, grid).max_curve()) * (1 - 1e-6)
            attained = sigma_sweep(ss, [result.peak_omega]).max_curve()
            assert attained[0] == pytest.approx(result.norm, rel=1e-9)

    def test_feedthrough_dominated(self):
        ss = StateSpace([[-1.0]], [[1.0]], [[0.1]], [[2.0]])
        assert hinf_norm(ss).norm == pytest.approx(2.1, rel=1e-6)

    def test_to_dict(self, lag):
        assert set(hinf_norm(lag).to_dict()) == {"hinf_norm", "peak_omega", "iterations", "converged"}


class TestGridBound:
    def test_never_certified(self, lag):
        result = grid_hinf_bound(lag, make_grid(0.1, 10, 20))
        assert not result.converged
        assert result.norm <= 1.0


class TestSpectralAbscissa:
    def test_rotation(self):
        assert spectral_abscissa([[0.0, 1.0], [-1.0, 0.0]]) == pytest.approx(0.0, abs=1e-14)

    def test_identity(self):
        assert spectral_abscissa(-np.eye(3)) == pytest.approx(-1.0)

    def test_empty(self):
        assert spectral_abscissa(np.zeros((0, 0))) == -np.inf


@pytest.mark.slow
def test_matches_refined_dense_grid(rng):
    grid = np.concatenate([[0.0], np.logspace(-3, 3, 100000)])
    for _ in range(50):
        n, m, p = rng.integers(1, 21), rng.integers(1, 4), rng.integers(1, 4)
        ss = random_stable(rng, n, m, p)
        curve = np.linalg.svd(frequency_response(ss, grid), compute_uv=False)[:, 0]
        i = int(np.argmax(curve))
        fine = np.linspace(grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)], 2001)
        best = max(curve[i], np.max(np.linalg.svd(frequency_response(ss, fine), compute_uv=False)[:, 0]))
        result = hinf_norm(ss, 1e-6)
        assert result.converged
        assert result.norm >= best * (1 - 1e-6)
        assert result.norm <= best * (1 + 1e-4)
