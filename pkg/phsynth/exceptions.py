"""
Exception hierarchy for phsynth.

Every error raised on purpose by the package derives from PHSynthError so the
CLI can map it to an exit code.
"""


class PHSynthError(Exception):
    """Base class for all phsynth errors."""


class ConfigurationError(PHSynthError):
    """Invalid configuration value (environment, .env or CLI flag)."""


class StructuralError(PHSynthError):
    """Dimension or length mismatch between matrices or parameter vectors."""


class ValidationError(PHSynthError):
    """A port-Hamiltonian constraint is violated."""

    def __init__(self, message, failed=()):
        super().__init__(message)
        self.failed = tuple(failed)


class CertificateError(PHSynthError):
    """A factorization or certificate required by the operation does not exist."""


class FrequencyError(PHSynthError):
    """Evaluation failed at a specific point on the imaginary axis."""

    def __init__(self, message, s=None):
        self.s = None if s is None else complex(s)
        self.omega = None if s is None else self.s.imag
        if self.omega is not None:
            message = f"{message} (omega={self.omega:.6g})"
        super().__init__(message)


class PoleAtSampleError(FrequencyError):
    """(sI - A) is singular at the requested point."""


class IllPosedError(FrequencyError):
    """The feedback interconnection is not well-posed."""


class MissingSampleError(FrequencyError):
    """A sampled plant has no data at the requested frequency."""


class InstabilityError(PHSynthError):
    """The operation needs an asymptotically stable realization."""


class InfeasibleError(PHSynthError):
    """No solution exists for the requested problem."""


class SynthesisError(PHSynthError):
    """The synthesis loop hit an error; `iterate` holds the parameters at failure."""

    def __init__(self, message, iterate=None, gamma=None):
        super().__init__(message)
        self.iterate = iterate
        self.gamma = gamma


class SchemaError(PHSynthError):
    """An input file does not follow its declared schema."""

    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
