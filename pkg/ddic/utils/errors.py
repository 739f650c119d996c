class ValidationError(ValueError):
    """Invalid input, failed precondition or malformed configuration."""


class NumericalError(RuntimeError):
    """A numerical tolerance was violated or a quantity is undefined."""


class InfeasibleConstruction(ValidationError):
    """The requested construction is not implemented for the given inputs."""


class FairSamplingViolation(ValidationError):
    """A measurement model does not satisfy the weak fair-sampling assumption."""
