"""Exception types shared across the package."""


class ThermophaseError(Exception):
    """Base class for all package-specific errors."""


class DegenerateGrid(ThermophaseError):
    """Grid has too few cells or non-positive extent."""


class AnisotropicCells(ThermophaseError):
    """Cell sizes differ between the two axes; only square cells are supported."""


class ShapeMismatch(ThermophaseError):
    """A field does not conform to the grid it is used with."""


class NoConvergence(ThermophaseError):
    """Iterative linear solver hit its iteration cap.

    Carries the last residual norm and the iteration count.
    """

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NewtonDivergence(ThermophaseError):
    """Newton iteration failed to reduce the residual within its budget."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BadParameter(ThermophaseError):
    """A constructor argument is outside its admissible range."""


class DomainViolation(ThermophaseError):
    """An argument left the open domain of a singular potential.

    Raised instead of clamping so a loss of the separation property during a
    run is loud rather than silently saturated.
    """


class BallProjectionStall(ThermophaseError):
    """The box-and-ball projection loop exhausted its iterations."""


class LineSearchFailure(ThermophaseError):
    """Armijo backtracking found no acceptable decrease."""


class ParseError(ThermophaseError):
    """Configuration file is not well-formed."""


class ValidationError(ThermophaseError):
    """Configuration violates a model assumption; the message names it."""


class FormatError(ThermophaseError):
    """A snapshot file has a bad magic header or inconsistent shape."""


class StepError(ThermophaseError):
    """A time step failed; wraps the underlying error with its step index."""

    def __init__(self, step, cause):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause
