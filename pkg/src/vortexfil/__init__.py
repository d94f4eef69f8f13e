"""Numerical toolkit for colliding almost-parallel vortex filaments."""
from .errors import (BallViolationError, BoxSizeError, CollisionError, ConvergenceError,
                     DomainError, QuadratureError, SingularDenominatorError, ValidityError,
                     VortexfilError)

__version__ = "0.1.0"

__all__ = ["BallViolationError", "BoxSizeError", "CollisionError", "ConvergenceError",
           "DomainError", "QuadratureError", "SingularDenominatorError", "ValidityError",
           "VortexfilError"]
