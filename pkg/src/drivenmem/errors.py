"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition or invariant."""


class DomainError(ValueError):
    """Raised when an argument lies outside the mathematical domain of an operation."""


class NumericalError(RuntimeError):
    """Raised when a numerical routine fails (ill-conditioning, pole hit, divergence)."""
