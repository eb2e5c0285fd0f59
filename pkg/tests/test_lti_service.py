import numpy as np
import pytest

from phsynth.exceptions import IllPosedError, MissingSampleError, PoleAtSampleError, StructuralError, ValidationError
from phsynth.services.hinf_service import spectral_abscissa
from phsynth.services.lti_service import (
    ClosedLoop,
    FeedbackSign,
    PlantEvaluation,
    PlantEvaluator,
    SampledPlant,
    closed_loop_matrix,
    closed_loop_pencil,
    closed_loop_statespace,
    dissipation_residual,
    eval_plant,
    eval_transfer,
    lower_lft,
    make_grid,
    normalize_grid,
    simulate_lti,
    zero_controller,
)
from phsynth.services.msd_service import MSDConfig, msd_plant
from phsynth.services.ph_core import (
    PHForm,
    PHPlant,
    PlantStateSpace,
    StateSpace,
    ThetaVector,
    hamiltonian_value,
    ph_to_statespace,
    plant_statespace,
    theta_partition,
    theta_size,
    theta_to_controller,
)
from phsynth.utils.linalg_utils import upper_entries, vtu
from tests.conftest import assert_same_spectrum, random_ph, random_plant, random_stable


def _scalar_pe(P11=0.0, P12=1.0, P21=1.0, P22=0.0):
    return PlantEvaluation(1.0, *(np.array([[complex(v)]]) for v in (P11, P12, P21, P22)))


def _partitioned(A=-1.0, B2=1.0, C2=1.0, D22=0.0):
    return PlantStateSpace(
        A=[[A]], B1=[[0.0]], B2=[[B2]], C1=[[0.0]], C2=[[C2]],
        D11=[[0.0]], D12=[[0.0]], D21=[[0.0]], D22=[[D22]],
    )


class TestEvalTransfer:
    def test_dc_gain(self, lag):
        assert eval_transfer(lag, 0) == pytest.approx(np.array([[1.0]]))

    def test_unit_frequency(self, lag):
        assert eval_transfer(lag, 1j)[0, 0] == pytest.approx(0.5 - 0.5j)

    def test_pole_at_sample(self):
        integrator = StateSpace([[0.0]], [[1.0]], [[1.0]], [[0.0]])
        with pytest.raises(PoleAtSampleError) as excinfo:
            eval_transfer(integrator, 0)
        assert excinfo.value.omega == 0.0

    def test_conjugate_symmetry(self, rng):
        ss = random_stable(rng, 5, 2, 3)
        for s in (0.3 + 2j, -0.1 + 0.7j, 5j):
            np.testing.assert_allclose(eval_transfer(ss, np.conj(s)), np.conj(eval_transfer(ss, s)), atol=1e-12)

    def test_static_system(self):
        gain = StateSpace(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((2, 0)), [[3.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(eval_transfer(gain, 4j), [[3.0, 0.0], [0.0, 1.0]])


class TestEvalPlant:
    def test_zero_disturbance_map(self, rng):
        plant = random_plant(rng, 4, 1)
        plant = PHPlant(plant.ph, np.zeros((4, 1)), plant.C1, plant.D11, plant.D12, plant.D21)
        for s in (0.5j, 3j):
            pe = eval_plant(plant, s)
            np.testing.assert_allclose(pe.P11, plant.D11)
            np.testing.assert_allclose(pe.P21, plant.D21)

    def test_zero_performance_output(self, rng):
        plant = random_plant(rng, 4, 1)
        plant = PHPlant(plant.ph, plant.B1, np.zeros((1, 4)), np.zeros((1, 1)), np.zeros((1, 1)), plant.D21)
        pe = eval_plant(plant, 2j)
        assert not np.any(pe.P11)
        assert not np.any(pe.P12)

    def test_blocks_match_assembled_system(self):
        plant = msd_plant(MSDConfig(n_masses=1))
        full = eval_transfer(plant_statespace(plant).assemble(), 1j)
        pe = eval_plant(plant, 1j)
        p1, m1 = pe.P11.shape
        np.testing.assert_allclose(pe.P11, full[:p1, :m1], atol=1e-12)
        np.testing.assert_allclose(pe.P12, full[:p1, m1:], atol=1e-12)
        np.testing.assert_allclose(pe.P21, full[p1:, :m1], atol=1e-12)
        np.testing.assert_allclose(pe.P22, full[p1:, m1:], atol=1e-12)


class TestPlantEvaluator:
    def test_cache_counts_factorizations(self):
        evaluator = PlantEvaluator(msd_plant(MSDConfig(n_masses=2)))
        grid = make_grid(0.1, 10, 7)
        evaluator.evaluate_many(grid)
        evaluator.evaluate_many(grid)
        assert evaluator.factorizations == 7
        assert evaluator.cache_size() == 7

    def test_threads_give_same_values(self):
        plant = msd_plant(MSDConfig(n_masses=3))
        grid = make_grid(0.01, 100, 40)
        serial = PlantEvaluator(plant).evaluate_many(grid)
        threaded = PlantEvaluator(plant, threads=4).evaluate_many(grid)
        np.testing.assert_array_equal(serial.P12, threaded.P12)
        np.testing.assert_array_equal(serial.omegas, grid)


class TestSampledPlant:
    def test_exact_lookup(self):
        plant = msd_plant(MSDConfig(n_masses=2))
        grid = make_grid(0.1, 10, 5)
        batch = PlantEvaluator(plant).evaluate_many(grid)
        sampled = SampledPlant(batch.omegas, batch.P11, batch.P12, batch.P21, batch.P22)
        np.testing.assert_array_equal(sampled.evaluate(grid[2]).P22, batch.P22[2])
        with pytest.raises(MissingSampleError):
            sampled.evaluate(grid[2] * 1.01)

    def test_audit_grid_is_file_grid(self):
        grid = np.array([0.1, 1.0, 10.0])
        blocks = np.ones((3, 1, 1), dtype=complex)
        sampled = SampledPlant(grid, blocks, blocks, blocks, blocks)
        np.testing.assert_array_equal(sampled.audit_grid(0.5, 100.0, 1000), [1.0, 10.0])

    def test_duplicate_frequencies_rejected(self):
        blocks = np.ones((2, 1, 1), dtype=complex)
        with pytest.raises(StructuralError):
            SampledPlant([1.0, 1.0], blocks, blocks, blocks, blocks)


class TestLowerLFT:
    def test_zero_controller_returns_p11(self, rng):
        plant = random_plant(rng, 5, 2, m1=2, p1=3)
        for s in (0.1j, 1j, 30j):
            pe = eval_plant(plant, s)
            for sign in FeedbackSign:
                np.testing.assert_array_equal(lower_lft(pe, np.zeros((2, 2)), sign), pe.P11)

    def test_direct_formula(self):
        assert lower_lft(_scalar_pe(), [[0.7]], FeedbackSign.POSITIVE)[0, 0] == pytest.approx(0.7)
        assert lower_lft(_scalar_pe(), [[0.7]], FeedbackSign.NEGATIVE)[0, 0] == pytest.approx(-0.7)

    def test_ill_posed(self):
        with pytest.raises(IllPosedError):
            lower_lft(_scalar_pe(P22=1.0), [[1.0]], FeedbackSign.POSITIVE)

    def test_shape_mismatch(self):
        with pytest.raises(StructuralError):
            lower_lft(_scalar_pe(), np.zeros((2, 2)))


class TestClosedLoopMatrix:
    def test_negative_feedback_by_hand(self):
        ctrl = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
        A_cl = closed_loop_matrix(_partitioned(), ctrl, FeedbackSign.NEGATIVE)
        np.testing.assert_allclose(A_cl, [[-1.0, -1.0], [1.0, -1.0]])
        assert_same_spectrum(np.linalg.eigvals(A_cl), [-1 + 1j, -1 - 1j], 1e-12)

    @pytest.mark.parametrize("sign", list(FeedbackSign))
    def test_no_measurement_is_block_triangular(self, sign):
        ctrl = StateSpace([[-2.0]], [[5.0]], [[3.0]], [[0.0]])
        A_cl = closed_loop_matrix(_partitioned(C2=0.0), ctrl, sign)
        np.testing.assert_allclose(A_cl, [[-1.0, sign.value * 3.0], [0.0, -2.0]])

    def test_ill_posed(self):
        ctrl = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
        with pytest.raises(IllPosedError):
            closed_loop_matrix(_partitioned(D22=1.0), ctrl, FeedbackSign.POSITIVE)

    def test_statespace_matches_frequency_lft(self, rng):
        plant = random_plant(rng, 4, 2, m1=2, p1=2)
        ctrl = ph_to_statespace(random_ph(rng, 3, 2))
        closed = closed_loop_statespace(plant, ctrl)
        loop = ClosedLoop(plant, ctrl)
        for omega in (0.05, 1.0, 20.0):
            np.testing.assert_allclose(eval_transfer(closed, 1j * omega), loop.evaluate(omega), atol=1e-10)

    def test_ph_pairs_are_lyapunov_stable(self, rng):
        for _ in range(20):
            n, k, m = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 3)
            plant = random_plant(rng, n, m)
            ctrl = ph_to_statespace(random_ph(rng, k, m))
            assert spectral_abscissa(closed_loop_matrix(plant, ctrl)) <= 1e-8


class TestPencil:
    def test_finite_eigenvalues_match_closed_loop(self, rng):
        for _ in range(20):
            n, k, m = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 3)
            plant = random_plant(rng, n, m)
            ctrl = random_ph(rng, k, m)
            pencil = closed_loop_pencil(plant, ctrl)
            A_cl = closed_loop_matrix(plant, ph_to_statespace(ctrl), FeedbackSign.NEGATIVE)
            finite = pencil.finite_eigenvalues()
            assert_same_spectrum(finite, np.linalg.eigvals(A_cl), 1e-8 * max(1.0, np.linalg.norm(A_cl, 2)))
            assert pencil.infinite_count() == 2 * m
            assert np.max(finite.real) <= 1e-8

    @pytest.mark.parametrize("dissipation", ["none", "rank_one"])
    def test_lossless_plant_with_singular_dissipation(self, rng, dissipation):
        plant = msd_plant(MSDConfig(n_masses=3, damper=0.0))
        k = 2
        data = rng.standard_normal(theta_size(k, plant.p2))
        start, stop = theta_partition(k, plant.p2)["W"]
        factor = vtu(data[start:stop], k + plant.p2)
        kept_rows = 0 if dissipation == "none" else 1
        factor[kept_rows:] = 0.0
        data[start:stop] = upper_entries(factor)
        ctrl = theta_to_controller(ThetaVector(data, k, plant.p2))
        A_cl = closed_loop_matrix(plant, ph_to_statespace(ctrl))
        abscissa = spectral_abscissa(A_cl)
        assert abscissa <= 1e-8
        if dissipation == "none":
            assert abscissa >= -1e-8
        finite = closed_loop_pencil(plant, ctrl).finite_eigenvalues()
        assert_same_spectrum(finite, np.linalg.eigvals(A_cl), 1e-8 * max(1.0, np.linalg.norm(A_cl, 2)))

    def test_rejects_invalid_controller(self, rng):
        good = random_ph(rng, 2, 1)
        bad = PHForm(good.J, -good.R, good.Q, good.G, good.F, good.S, good.N)
        with pytest.raises(ValidationError):
            closed_loop_pencil(random_plant(rng, 3, 1), bad)


class TestSimulation:
    def test_scalar_decay(self):
        ss = StateSpace([[-1.0]], [[0.0]], [[1.0]], [[0.0]])
        traj = simulate_lti(ss, np.zeros((1000, 1)), [1.0], 1e-3)
        assert traj.x[-1, 0] == pytest.approx(np.exp(-1.0), abs=1e-6)
        assert traj.t[-1] == pytest.approx(1.0)

    def test_zero_trajectory(self, rng):
        ss = ph_to_statespace(random_ph(rng, 3, 2))
        traj = simulate_lti(ss, np.zeros((50, 2)), np.zeros(3), 1e-2)
        assert not np.any(traj.x)
        assert not np.any(traj.y)

    def test_energy_nonincreasing_without_input(self, rng):
        ph = random_ph(rng, 4, 1)
        traj = simulate_lti(ph_to_statespace(ph), np.zeros((2000, 1)), rng.standard_normal(4), 1e-3)
        energy = np.array([hamiltonian_value(ph, x) for x in traj.x])
        assert np.all(np.diff(energy) <= 1e-12 * energy[0])

    def test_dissipation_inequality(self, rng):
        dt, steps = 1e-4, 10000
        t = dt * np.arange(steps)
        for _ in range(10):
            n, m = rng.integers(1, 6), rng.integers(1, 3)
            ph = random_ph(rng, n, m)
            freq, phase = rng.uniform(0.5, 5.0, m), rng.uniform(0, np.pi, m)
            u = np.sin(np.outer(t, freq) + phase)
            traj = simulate_lti(ph_to_statespace(ph), u, rng.standard_normal(n), dt)
            assert dissipation_residual(ph, traj, dt) <= 1e-6

    def test_input_channel_mismatch(self, lag):
        with pytest.raises(StructuralError):
            simulate_lti(lag, np.zeros((10, 2)), [0.0], 1e-2)


class TestGrids:
    def test_log_grid(self):
        grid = make_grid(1e-3, 1e3, 7)
        np.testing.assert_allclose(grid, [1e-3, 1e-2, 1e-1, 1, 10, 100, 1000])

    def test_normalize_drops_near_duplicates(self):
        np.testing.assert_array_equal(normalize_grid([3.0, 1.0, 1.0 + 1e-15, 2.0]), [1.0, 2.0, 3.0])

    def test_bad_range(self):
        with pytest.raises(ValueError):
            make_grid(10, 1, 5)

    def test_zero_controller_shape(self):
        K = zero_controller(2, 2)
        assert K.n_states == 0
        assert K.D.shape == (2, 2)


@pytest.mark.slow
def test_ph_pairs_at_scale(rng):
    for _ in range(200):
        n, k, m = rng.integers(1, 21), rng.integers(1, 6), rng.integers(1, 3)
        plant = random_plant(rng, n, m)
        ctrl = random_ph(rng, k, m)
        A_cl = closed_loop_matrix(plant, ph_to_statespace(ctrl))
        assert spectral_abscissa(A_cl) <= 1e-8
        finite = closed_loop_pencil(plant, ctrl).finite_eigenvalues()
        assert_same_spectrum(finite, np.linalg.eigvals(A_cl), 1e-8 * max(1.0, np.linalg.norm(A_cl, 2)))


@pytest.mark.slow
def test_dissipation_inequality_at_scale(rng):
    dt, steps = 1e-4, 10000
    t = dt * np.arange(steps)
    for _ in range(50):
        n, m = rng.integers(1, 9), rng.integers(1, 3)
        ph = random_ph(rng, n, m)
        freq, phase = rng.uniform(0.5, 5.0, m), rng.uniform(0, np.pi, m)
        u = np.sin(np.outer(t, freq) + phase)
        traj = simulate_lti(ph_to_statespace(ph), u, rng.standard_normal(n), dt)
        assert dissipation_residual(ph, traj, dt) <= 1e-6
