"""Exception hierarchy shared by the package."""


class StepDeconvError(Exception):
    """Base class for all package errors."""


class ContractError(StepDeconvError, ValueError):
    """A caller violated a documented precondition."""


class KernelDomainError(StepDeconvError, ValueError):
    """Kernel evaluated where it is undefined (the Abel pole)."""


class QuadratureError(StepDeconvError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


class DegenerateFitError(StepDeconvError, ArithmeticError):
    """The height design matrix is rank deficient for the given jumps."""


class EstimationError(StepDeconvError, RuntimeError):
    """No feasible jump configuration could be fitted."""


class InferenceError(StepDeconvError, ValueError):
    """Asymptotic inference is unavailable (singular V, Abel kernel, ...)."""


class ConfigError(StepDeconvError, ValueError):
    """Malformed configuration or input file."""
