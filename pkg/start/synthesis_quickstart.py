import logging
import os

from dotenv import load_dotenv

from phsynth.config import configure_logging
from phsynth.services.msd_service import MSDConfig, msd_plant
from phsynth.services.synthesis_service import SynthesisConfig, sobsyn

load_dotenv()
configure_logging(os.getenv("PHSYNTH_LOG_LEVEL", "INFO"))
N_MASSES = int(os.getenv("QUICKSTART_MASSES", "5"))
ORDER = int(os.getenv("QUICKSTART_ORDER", "1"))


# --------------------------------------------------------------
# Build a mass-spring-damper plant
# --------------------------------------------------------------
def build_plant():
    """MSD chain with the benchmark defaults"""
    plant = msd_plant(MSDConfig(n_masses=N_MASSES))
    print(f"Plant: n={plant.n}, m={plant.m}, m1={plant.m1}, p1={plant.p1}")
    return plant


print("=== MSD plant ===")
plant = build_plant()


# --------------------------------------------------------------
# Synthesize a fixed-order pH controller
# --------------------------------------------------------------
def synthesize(plant):
    try:
        report = sobsyn(plant, SynthesisConfig(k=ORDER))
    except Exception as e:
        logging.error(f"Synthesis failed: {e}")
        return None

    print(f"gamma interval: [{report.gamma_l:.4g}, {report.gamma_u:.4g}]")
    print(f"closed-loop H-infinity norm: {report.hinf.norm:.4g} at omega={report.hinf.peak_omega:.4g}")
    print(f"closed-loop spectral abscissa: {report.spectral_abscissa:.3e}")
    print(f"controller passive: {report.certificate.passive}")
    print(f"runtime: {report.runtime:.2f}s, plant factorizations: {report.factorizations}")
    return report


print("=== SOBSYN ===")
report = synthesize(plant)


# --------------------------------------------------------------
# Bisection history
# --------------------------------------------------------------
if report is not None:
    print("=== History ===")
    for step in report.history:
        verdict = "accept" if step.accepted else "reject"
        print(f"gamma={step.gamma:.5g} alpha={step.alpha:.2e} samples={step.n_samples} {verdict}")
