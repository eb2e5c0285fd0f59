import logging
import os
import sys
from dataclasses import dataclass

from dotenv import load_dotenv

from phsynth.exceptions import ConfigurationError


@dataclass(frozen=True)
class ToleranceSet:
    """Structural tolerances shared by validation and certificates."""

    struct: float = 1e-12
    psd: float = 1e-8
    pd: float = 1e-10
    rt: float = 1e-8


DEFAULT_TOLERANCES = ToleranceSet()

# (environment variable, settings key, type, default)
_SETTINGS = [
    ("PHSYNTH_LOG_LEVEL", "LOG_LEVEL", str, "INFO"),
    ("PHSYNTH_THREADS", "THREADS", int, 1),
    ("PHSYNTH_EPS1", "EPS1", float, 1e-2),
    ("PHSYNTH_EPS2", "EPS2", float, 1e-6),
    ("PHSYNTH_MAX_ITER", "MAX_ITER", int, 500),
    ("PHSYNTH_OMEGA_MIN", "OMEGA_MIN", float, 1e-3),
    ("PHSYNTH_OMEGA_MAX", "OMEGA_MAX", float, 1e3),
    ("PHSYNTH_SAMPLES", "SAMPLES", int, 100),
    ("PHSYNTH_SEED", "SEED", int, 0),
    ("PHSYNTH_SHIFT", "SHIFT", float, 1e-8),
]


def load_configurations(config=None):
    """Fill `config` (a dict) from the environment and return it."""
    load_dotenv()
    config = {} if config is None else config
    for env_name, key, cast, default in _SETTINGS:
        raw = os.getenv(env_name)
        if raw is None or raw == "":
            config.setdefault(key, default)
            continue
        try:
            config[key] = cast(raw)
        except ValueError as e:
            raise ConfigurationError(f"{env_name}={raw!r} is not a valid {cast.__name__}") from e

    if config["THREADS"] < 1:
        raise ConfigurationError("PHSYNTH_THREADS must be >= 1")
    return config


def configure_logging(level="INFO"):
    if isinstance(level, str):
        numeric = logging.getLevelName(level.upper())
        if not isinstance(numeric, int):
            raise ConfigurationError(f"Unknown log level: {level}")
        level = numeric
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stdout,
        force=True,
    )
