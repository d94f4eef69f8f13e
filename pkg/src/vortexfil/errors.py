"""Exception hierarchy shared by all modules."""


class VortexfilError(Exception):
    """Base class for every error raised by the package."""


class DomainError(VortexfilError, ValueError):
    """Argument outside the domain of a function."""


class ConvergenceError(VortexfilError):
    """Fixed-point iteration did not converge within the allowed budget."""

    def __init__(self, message, last_ratio=None, iterations=None):
        super().__init__(message)
        self.last_ratio = last_ratio
        self.iterations = iterations


class ValidityError(VortexfilError):
    """Output violates a structural invariant (e.g. leaves the space E or the ball B)."""


class SingularDenominatorError(ConvergenceError):
    """A denominator of the nonlinearity vanished during iteration."""


class CollisionError(VortexfilError):
    """Two point vortices (or filaments) came closer than the collision threshold."""

    def __init__(self, message, pair=None, t=None, sigma=None):
        super().__init__(message)
        self.pair = pair
        self.t = t
        self.sigma = sigma


class BoxSizeError(VortexfilError):
    """The evolved field does not decay at the edges of the periodic box."""


class QuadratureError(VortexfilError):
    """A quadrature failed its self-convergence test."""


class BallViolationError(VortexfilError):
    """A perturbation left the region where the source denominators are controlled."""
