import argparse

from phsynth.config import load_configurations, configure_logging
from .commands import register_commands


def create_cli(argv=None):
    """
    Build the argument parser and parse `argv`.

    Environment settings are loaded first so they can serve as flag defaults;
    --log-level and --threads override them.
    """
    settings = load_configurations()

    parser = argparse.ArgumentParser(
        prog="phsynth",
        description="Fixed-order port-Hamiltonian H-infinity controller synthesis",
    )
    parser.add_argument("--threads", type=int, default=settings["THREADS"])
    parser.add_argument("--log-level", default=settings["LOG_LEVEL"])
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_commands(subparsers, settings)

    args = parser.parse_args(argv)
    settings["THREADS"] = max(1, args.threads)
    settings["LOG_LEVEL"] = args.log_level
    configure_logging(settings["LOG_LEVEL"])
    return args, settings
