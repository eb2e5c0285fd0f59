import os

import numpy as np
from dotenv import load_dotenv

from phsynth.config import configure_logging
from phsynth.services.lti_service import make_grid
from phsynth.services.msd_service import run_passivation_comparison
from phsynth.services.passivity_service import kyp_check, popov_sweep
from phsynth.services.ph_core import PHForm, PHPlant, StateSpace

load_dotenv()
configure_logging(os.getenv("PHSYNTH_LOG_LEVEL", "INFO"))

# Nonpassive first-order controller: Popov function at omega=0 is 2 - 6 < 0
CONTROLLER = StateSpace(A=[[-1.0]], B=[[1.0]], C=[[-3.0]], D=[[1.0]])
GRID = make_grid(1e-3, 1e3, 200)


# --------------------------------------------------------------
# Popov sweep and KYP certificate
# --------------------------------------------------------------
def inspect_controller(controller):
    table = popov_sweep(controller, GRID)
    i = int(np.argmin(table.min_curve()))
    print(f"min Popov eigenvalue {table.min_curve()[i]:.4g} at omega={table.omegas[i]:.4g}")
    certificate = kyp_check(controller)
    print("Certificate:", certificate.to_dict())
    return certificate


print("=== Controller passivity ===")
inspect_controller(CONTROLLER)


# --------------------------------------------------------------
# Passivation against a scalar test plant
# --------------------------------------------------------------
def cancelling_plant():
    """Plant whose negative-feedback loop with CONTROLLER is the constant 0.2"""
    ph = PHForm(J=[[0.0]], R=[[1.0]], Q=[[1.0]], G=[[0.0]], F=[[0.0]], S=[[0.0]], N=[[0.0]])
    return PHPlant(ph=ph, B1=[[1.0]], C1=[[-3.0]], D11=[[1.2]], D12=[[1.0]], D21=[[1.0]])


print("=== Passivation ===")
comparison = run_passivation_comparison(cancelling_plant(), CONTROLLER, GRID)
print(f"H-infinity before: {comparison['hinf_before']:.4g}")
print(f"H-infinity after:  {comparison['hinf_after']:.4g}")
print(f"perturbation norm: {comparison['perturbation_norm']:.4g}")
