from functools import wraps
import inspect
import logging

from phsynth.exceptions import ValidationError


def check_ph_argument(name, value, tolerances=None):
    """
    Validate a PHForm or PHPlant argument; anything else passes through untouched.
    """
    from phsynth.services.ph_core import PHForm, PHPlant, validate_ph_form

    if isinstance(value, PHPlant):
        value = value.ph
    if not isinstance(value, PHForm):
        return
    report = validate_ph_form(value, tolerances)
    if not report.passed:
        failed = report.failed_names()
        logging.info(f"Rejected argument '{name}': {', '.join(failed)}")
        raise ValidationError(f"{name} violates: {', '.join(failed)}", failed=failed)


def requires_valid_ph(*argnames):
    """
    Decorator to ensure that the named pH arguments of an operation satisfy the
    port-Hamiltonian constraints before the operation runs.
    """

    def decorator(f):
        signature = inspect.signature(f)

        @wraps(f)
        def decorated_function(*args, **kwargs):
            bound = signature.bind(*args, **kwargs)
            for name in argnames:
                check_ph_argument(name, bound.arguments.get(name))
            return f(*args, **kwargs)

        return decorated_function

    return decorator
