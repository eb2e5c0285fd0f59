import logging
import sys

from dotenv import load_dotenv

from phsynth import create_cli
from phsynth.exceptions import (
    InfeasibleError,
    PHSynthError,
    SchemaError,
    SynthesisError,
    ValidationError,
)

# ==========================================
# Load environment variables FIRST
# ==========================================
# PHSYNTH_* values from .env become the defaults of the CLI flags
load_dotenv()

EXIT_CODES = [
    (ValidationError, 2),
    ((InfeasibleError, SynthesisError), 3),
    ((SchemaError, OSError), 4),
    (PHSynthError, 1),
]


def main(argv=None):
    try:
        args, settings = create_cli(argv)
        return args.handler(args, settings)
    except (PHSynthError, OSError) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return next(code for kinds, code in EXIT_CODES if isinstance(e, kinds))


if __name__ == "__main__":
    sys.exit(main())
