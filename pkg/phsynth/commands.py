"""Command handlers: one function per CLI subcommand, each returning an exit code."""

import logging
from pathlib import Path

from phsynth.exceptions import FrequencyError, InstabilityError
from phsynth.services.hinf_service import hinf_norm, sigma_sweep, spectral_abscissa
from phsynth.services.lti_service import (
    ClosedLoop,
    FeedbackSign,
    SampledPlant,
    closed_loop_matrix,
    closed_loop_statespace,
    make_grid,
    zero_controller,
)
from phsynth.services.msd_service import MSDConfig, msd_plant, run_table1_experiment, sample_plant
from phsynth.services.passivity_service import PassivationConfig, kyp_check, passivity_enforce, popov_sweep
from phsynth.services.synthesis_service import SynthesisConfig, sobsyn
from phsynth.utils.io_utils import (
    as_statespace,
    dumps_json,
    load_controller,
    load_plant,
    save_controller,
    save_plant,
    write_json,
    write_records_csv,
    write_sweep_csv,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2

TABLE_FIELDS = [
    "n", "k", "status", "hinf", "reference_hinf", "hinf_certified", "gamma_u",
    "runtime", "reference_runtime", "factorizations", "spectral_abscissa", "passive", "error",
]


def _emit(data, out):
    if out:
        write_json(data, out)
    else:
        print(dumps_json(data))


def _grid(args):
    return make_grid(args.grid_min, args.grid_max, args.grid_points)


def _synthesis_config(args, settings, k):
    return SynthesisConfig.from_settings(
        settings,
        k=k,
        gamma_u=getattr(args, "gamma_u", None),
        eps1=args.eps1,
        eps2=args.eps2,
        max_iter=args.max_iter,
        omega_min=args.omega_min,
        omega_max=args.omega_max,
        n_samples=args.samples,
        seed=args.seed,
        sign=FeedbackSign.parse(args.sign),
    )


def handle_synth(args, settings):
    plant = load_plant(args.plant)
    config = _synthesis_config(args, settings, args.order)
    logger.info(f"Synthesizing order-{config.k} pH controller for {args.plant}")
    report = sobsyn(plant, config, threads=settings["THREADS"])

    controller_out = args.controller_out or str(Path(args.out).with_name(Path(args.out).stem + "_controller.json"))
    save_controller(report.controller, controller_out)
    data = report.to_dict()
    data["controller_file"] = controller_out
    write_json(data, args.out)
    return EXIT_OK


def handle_validate(args, settings):
    plant = load_plant(args.plant)
    if isinstance(plant, SampledPlant):
        logger.error("validate needs a state-space plant; sampled plants have no realization")
        return EXIT_VALIDATION
    ctrl = as_statespace(load_controller(args.controller))
    sign = FeedbackSign.parse(args.sign)

    result = {"hinf_norm": None, "peak_omega": None, "spectral_abscissa": None, "well_posed": True}
    try:
        closed = closed_loop_statespace(plant, ctrl, sign)
    except FrequencyError as e:
        logger.warning(f"Closed loop is ill-posed: {e}")
        result["well_posed"] = False
        _emit(result, args.out)
        return EXIT_VALIDATION

    result["spectral_abscissa"] = spectral_abscissa(closed_loop_matrix(plant, ctrl, sign))
    try:
        hinf = hinf_norm(closed, args.rel_tol)
    except InstabilityError as e:
        logger.warning(str(e))
        _emit(result, args.out)
        return EXIT_VALIDATION
    result.update(hinf_norm=hinf.norm, peak_omega=hinf.peak_omega, converged=hinf.converged)
    _emit(result, args.out)
    return EXIT_OK


def handle_passivity(args, settings):
    ctrl = as_statespace(load_controller(args.controller))
    grid = _grid(args)
    threads = settings["THREADS"]

    table = popov_sweep(ctrl, grid, threads)
    if args.csv:
        write_sweep_csv(args.csv, table.omegas, table.values, "eig")
    certificate = kyp_check(ctrl)
    data = {"certificate": certificate.to_dict()}

    if args.enforce:
        result = passivity_enforce(ctrl, grid, PassivationConfig(threads=threads))
        save_controller(result.controller, args.enforce)
        data["passivation"] = {
            "perturbation_norm": result.perturbation_norm,
            "rho": result.rho,
            "grid_points": int(result.grid.size),
            "certificate": result.certificate.to_dict(),
            "controller_file": args.enforce,
        }
    _emit(data, args.out)
    return EXIT_OK if certificate.passive or args.enforce else EXIT_VALIDATION


def handle_sigma(args, settings):
    plant = load_plant(args.plant)
    m, p2 = plant.dims[2:] if isinstance(plant, SampledPlant) else (plant.m, plant.p2)
    if args.controller:
        ctrl = as_statespace(load_controller(args.controller))
    else:
        ctrl = zero_controller(m, p2)
    grid = plant.omegas if isinstance(plant, SampledPlant) else _grid(args)
    closed = ClosedLoop(plant, ctrl, FeedbackSign.parse(args.sign), threads=settings["THREADS"])
    table = sigma_sweep(closed, grid, settings["THREADS"])
    write_sweep_csv(args.csv, table.omegas, table.values, "sigma")
    peak, omega = table.peak()
    logger.info(f"Largest sampled singular value {peak:.6g} at omega={omega:.6g}")
    return EXIT_OK


def handle_msd(args, settings):
    cfg = MSDConfig(
        n_masses=args.masses,
        mass=args.mass,
        spring=args.spring,
        damper=args.damper,
        io_masses=tuple(args.io) if args.io else None,
        beta=args.beta,
        eta=args.eta,
        feedthrough=args.feedthrough,
        velocity_weight=args.velocity_weight,
    )
    plant = msd_plant(cfg)
    if args.sampled_points:
        plant = sample_plant(plant, make_grid(args.omega_min, args.omega_max, args.sampled_points), settings["THREADS"])
    save_plant(plant, args.out)
    return EXIT_OK


def handle_table1(args, settings):
    base = _synthesis_config(args, settings, 1)
    records = run_table1_experiment(
        orders=args.orders,
        sizes=args.sizes,
        synthesis=base,
        threads=settings["THREADS"],
    )
    write_records_csv(args.csv, records, TABLE_FIELDS)
    failed = [r for r in records if r["status"] != "ok"]
    if failed:
        logger.warning(f"{len(failed)} of {len(records)} cells failed")
    return EXIT_OK


def _add_grid_flags(parser, settings):
    parser.add_argument("--grid-min", type=float, default=settings["OMEGA_MIN"])
    parser.add_argument("--grid-max", type=float, default=settings["OMEGA_MAX"])
    parser.add_argument("--grid-points", type=int, default=1000)


def _add_synthesis_flags(parser):
    parser.add_argument("--eps1", type=float)
    parser.add_argument("--eps2", type=float)
    parser.add_argument("--max-iter", type=int)
    parser.add_argument("--omega-min", type=float)
    parser.add_argument("--omega-max", type=float)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--sign", choices=["negative", "positive"], default="negative")


def register_commands(subparsers, settings):
    synth = subparsers.add_parser("synth", help="synthesize a fixed-order pH controller")
    synth.add_argument("--plant", required=True)
    synth.add_argument("--order", "-k", type=int, required=True)
    synth.add_argument("--gamma-u", type=float)
    synth.add_argument("--out", required=True, help="report JSON")
    synth.add_argument("--controller-out", help="controller JSON (ph-form/v1)")
    _add_synthesis_flags(synth)
    synth.set_defaults(handler=handle_synth)

    validate = subparsers.add_parser("validate", help="closed-loop H-infinity norm and stability")
    validate.add_argument("--plant", required=True)
    validate.add_argument("--controller", required=True)
    validate.add_argument("--sign", choices=["negative", "positive"], default="negative")
    validate.add_argument("--rel-tol", type=float, default=1e-6)
    validate.add_argument("--out")
    validate.set_defaults(handler=handle_validate)

    passivity = subparsers.add_parser("passivity", help="Popov sweep and KYP certificate of a controller")
    passivity.add_argument("--controller", required=True)
    _add_grid_flags(passivity, settings)
    passivity.add_argument("--csv")
    passivity.add_argument("--out")
    passivity.add_argument("--enforce", metavar="OUT_JSON", help="write a passivated controller")
    passivity.set_defaults(handler=handle_passivity)

    sigma = subparsers.add_parser("sigma", help="closed-loop singular-value sweep")
    sigma.add_argument("--plant", required=True)
    sigma.add_argument("--controller")
    sigma.add_argument("--sign", choices=["negative", "positive"], default="negative")
    _add_grid_flags(sigma, settings)
    sigma.add_argument("--csv", required=True)
    sigma.set_defaults(handler=handle_sigma)

    msd = subparsers.add_parser("msd", help="write a mass-spring-damper plant file")
    msd.add_argument("--masses", type=int, default=5)
    msd.add_argument("--mass", type=float, default=4.0)
    msd.add_argument("--spring", type=float, default=4.0)
    msd.add_argument("--damper", type=float, default=1.0)
    msd.add_argument("--io", type=int, nargs="+")
    msd.add_argument("--beta", type=float, default=0.1)
    msd.add_argument("--eta", type=float, default=0.1)
    msd.add_argument("--feedthrough", type=float, default=MSDConfig.feedthrough)
    msd.add_argument("--velocity-weight", type=float, default=MSDConfig.velocity_weight)
    msd.add_argument("--sampled-points", type=int, help="write transfer-function samples instead")
    msd.add_argument("--omega-min", type=float, default=settings["OMEGA_MIN"])
    msd.add_argument("--omega-max", type=float, default=settings["OMEGA_MAX"])
    msd.add_argument("--out", required=True)
    msd.set_defaults(handler=handle_msd)

    table1 = subparsers.add_parser("table1", help="run the MSD benchmark table")
    table1.add_argument("--orders", type=int, nargs="+")
    table1.add_argument("--sizes", type=int, nargs="+")
    table1.add_argument("--csv", required=True)
    _add_synthesis_flags(table1)
    table1.set_defaults(handler=handle_table1)
