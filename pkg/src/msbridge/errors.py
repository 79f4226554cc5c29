"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class InfeasibleError(RuntimeError):
    """Raised when a linear system or calibration instance has no solution.

    The ``certificate`` attribute, when present, carries a vector of
    multipliers whose inner product with the right-hand side is positive
    while the combined constraint row is nonpositive (Farkas direction),
    or a human-readable description of the violated constraint.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver exhausts its budget.

    Carries the last residuals so callers can report how close the run got.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class StabilizationError(RuntimeError):
    """Raised when the bounded-approximation pipeline cannot certify its
    hypotheses within the configured schedule (out-of-hypothesis input)."""
