import numpy as np
import pytest

from phsynth.exceptions import ConfigurationError
from phsynth.services.hinf_service import hinf_norm, spectral_abscissa
from phsynth.services.lti_service import closed_loop_statespace, eval_plant, make_grid, zero_controller
from phsynth.services.msd_service import MSDConfig, load_benchmark, msd_plant, run_table1_experiment, sample_plant
from phsynth.services.ph_core import ph_to_statespace, validate_ph_form
from phsynth.services.synthesis_service import SynthesisConfig
from phsynth.utils.io_utils import write_json
from tests.conftest import assert_same_spectrum


class TestMSDPlant:
    def test_default_chain(self):
        plant = msd_plant(MSDConfig(n_masses=5))
        assert plant.n == 10
        assert plant.m == 2
        assert plant.m1 == 1
        assert plant.p1 == 3
        assert validate_ph_form(plant.ph).passed

    @pytest.mark.parametrize("n_masses", [1, 2, 5, 10, 50])
    @pytest.mark.parametrize("damper", [0.0, 1.0])
    def test_always_valid(self, n_masses, damper):
        assert validate_ph_form(msd_plant(MSDConfig(n_masses=n_masses, damper=damper)).ph).passed

    def test_lossless_chain(self):
        plant = msd_plant(MSDConfig(n_masses=5, damper=0.0))
        assert not np.any(plant.ph.R)
        assert spectral_abscissa(ph_to_statespace(plant.ph).A) == pytest.approx(0.0, abs=1e-10)

    def test_single_mass_polynomial(self):
        plant = msd_plant(MSDConfig(n_masses=1, mass=1.0, spring=1.0, damper=1.0))
        eigs = np.linalg.eigvals(ph_to_statespace(plant.ph).A)
        assert_same_spectrum(eigs, np.roots([1.0, 1.0, 1.0]), 1e-12)

    def test_io_defaults(self):
        assert MSDConfig(n_masses=1).io_masses == (1,)
        assert MSDConfig(n_masses=3).io_masses == (1, 2)

    @pytest.mark.parametrize("io", [(0,), (4,), (1, 1)])
    def test_bad_io(self, io):
        with pytest.raises(ConfigurationError):
            MSDConfig(n_masses=3, io_masses=io)

    def test_bad_parameters(self):
        with pytest.raises(ConfigurationError):
            MSDConfig(mass=0.0)
        with pytest.raises(ConfigurationError):
            MSDConfig(feedthrough=-0.1)

    def test_performance_weights(self):
        plant = msd_plant(MSDConfig(n_masses=3))
        assert plant.D11[0, 0] == 0.445
        assert not np.any(plant.D11[1:])
        assert not np.any(plant.D12[0])
        np.testing.assert_allclose(plant.C1[0, 1], 0.002 / 4.0)

    @pytest.mark.parametrize("n_masses", [1, 5, 20])
    def test_open_loop_sits_on_the_floor(self, n_masses):
        # mobility of mass 1 is bounded by 1 / damper and has a nonnegative real part
        plant = msd_plant(MSDConfig(n_masses=n_masses))
        result = hinf_norm(closed_loop_statespace(plant, zero_controller(plant.m, plant.p2)))
        assert 0.445 - 1e-12 <= result.norm <= 0.447


class TestSamplePlant:
    def test_matches_direct_evaluation(self):
        plant = msd_plant(MSDConfig(n_masses=3))
        grid = make_grid(0.1, 10, 11)
        sampled = sample_plant(plant, grid, threads=2)
        for i, omega in enumerate(grid):
            np.testing.assert_array_equal(sampled.P12[i], eval_plant(plant, 1j * omega).P12)


class TestBenchmark:
    def test_stored_table(self):
        benchmark = load_benchmark()
        assert benchmark["orders"] == [1, 5, 10]
        assert 10 in benchmark["sizes"]
        assert benchmark["reference"]["10"]["1"]["hinf"] == pytest.approx(0.49)
        assert benchmark["defaults"]["feedthrough"] == MSDConfig.feedthrough
        assert benchmark["defaults"]["velocity_weight"] == MSDConfig.velocity_weight

    def _write(self, path, sizes):
        write_json(
            {
                "orders": [1],
                "sizes": sizes,
                "defaults": {"mass": 4.0, "spring": 4.0, "damper": 1.0, "beta": 0.1, "eta": 0.1},
                "reference": {"4": {"1": {"hinf": 0.5, "runtime": 1.0}}},
            },
            path / "msd_benchmark.json",
        )

    def test_small_cell(self, tmp_path):
        self._write(tmp_path, [4])
        config = SynthesisConfig(k=1, eps1=0.1, n_samples=20, max_iter=50, audit_points=200)
        (record,) = run_table1_experiment(synthesis=config, data_dir=tmp_path)
        assert record["status"] == "ok"
        assert record["n"] == 4 and record["k"] == 1
        assert record["reference_hinf"] == 0.5
        assert record["spectral_abscissa"] <= 1e-8
        assert np.isfinite(record["hinf"])

    def test_failed_cell_is_recorded(self, tmp_path):
        self._write(tmp_path, [4])
        config = SynthesisConfig(k=1, gamma_u=1e-6, gamma_u_doublings=0, eps2=1e-12, max_iter=5)
        (record,) = run_table1_experiment(synthesis=config, data_dir=tmp_path)
        assert record["status"] == "failed"
        assert "doublings" in record["error"]

    def test_odd_size_rejected(self, tmp_path):
        self._write(tmp_path, [5])
        with pytest.raises(ConfigurationError):
            run_table1_experiment(synthesis=SynthesisConfig(k=1), data_dir=tmp_path)


@pytest.mark.slow
@pytest.mark.parametrize(
    "n, k, low, high",
    [(10, 1, 0.44, 0.55), (20, 1, 0.0, 0.46), (100, 5, 0.0, 0.45)],
)
def test_reference_cells(n, k, low, high):
    (record,) = run_table1_experiment(orders=[k], sizes=[n])
    assert record["status"] == "ok"
    assert record["hinf_certified"]
    assert low <= record["hinf"] <= high
    assert record["passive"]
    assert record["spectral_abscissa"] <= 1e-8


@pytest.mark.slow
def test_factorizations_grow_sublinearly():
    small, large = run_table1_experiment(orders=[1], sizes=[100, 1000])
    assert small["status"] == large["status"] == "ok"
    assert large["factorizations"] < 10 * small["factorizations"]
