class KernelGuardError(Exception):
    """Base class for every error raised by the simulator."""


class DimensionError(KernelGuardError, ValueError):
    """Matrices or vectors with incompatible shapes."""


class InvalidSpecError(KernelGuardError, ValueError):
    """A noise spec, gain or parameter that violates its stated invariants."""


class NumericalError(KernelGuardError):
    """Base class for numerical failures (exit code 3 on the CLI)."""


class ConvergenceError(NumericalError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, iterations: int = 0, residual: float = float('nan')):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SingularityError(NumericalError):
    """Evaluation point too close to a pole."""


class StabilityError(NumericalError):
    """A matrix that must be Schur is not."""


class DetectabilityError(StabilityError):
    pass


class StabilizabilityError(StabilityError):
    pass


class UnsupportedSystemError(NumericalError):
    """Operation not defined for this system shape (e.g. non-square pencil)."""


class InfeasibleAttackError(KernelGuardError):
    """The requested attack cannot be constructed for the given plant."""


class DesyncError(KernelGuardError):
    """Plant and monitor disagree on the switching mode."""


class ScenarioError(KernelGuardError, ValueError):
    """Scenario file that does not pass schema or dimension validation."""

    def __init__(self, message: str, errors=None):
        super().__init__(message)
        self.errors = errors or {}


class TransportError(KernelGuardError):
    """Timeout or closed peer on the frame channel."""


class FrameDecodeError(TransportError, ValueError):
    """Bytes that are not a valid channel frame."""
